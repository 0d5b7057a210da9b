use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rand::seq::SliceRandom;

use ais_vrnn::anomaly::{
    cells_geojson, default_global_threshold, detect_contrario, detect_global, detections_geojson, family_size, fit_cells,
    score_tracks, CellStats, Detection, TrackScores,
};
use ais_vrnn::classifier::{build_matrices, evaluate, train_classifier, CnnClassifier};
use ais_vrnn::config::RunConfig;
use ais_vrnn::embedding::train;
use ais_vrnn::fourhot::{accumulate_image, encode};
use ais_vrnn::ingest::{clean_tracks, parse_csv, read_tracks_csv, write_csv, write_tracks_csv, Track, VesselType};
use ais_vrnn::pipeline::{check_unique_ids, day_grids, grids, load_model, new_model, split_tracks, training_codes};
use ais_vrnn::reconstruct::{position_error_km, reconstruct_gap, FillMethod};
use ais_vrnn::rng::substream;
use ais_vrnn::synth::{Anomaly, Scenario};
use ais_vrnn::Error;

#[derive(Parser)]
#[command(name = "aisvrnn", version, about = "Latent-regime modelling of AIS trajectories")]
struct Cli {
    /// Run configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `[run] workdir`; default file paths live under it.
    #[arg(long, global = true)]
    workdir: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a labelled synthetic message CSV from a scenario file.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-vessel labels (mmsi, class, behavior, anomaly).
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Perturbation applied to some vessels: translate:KM, u-turn:MIN,
        /// speed-spike:KN or zone-swap:NORTH_KM,EAST_KM.
        #[arg(long)]
        anomaly: Option<String>,
        #[arg(long, default_value_t = 0.1)]
        anomaly_fraction: f64,
    },
    /// Clean messages into tracks and split them into train/validation/test files.
    Preprocess {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Print pipeline counters as JSON.
        #[arg(long)]
        stats: bool,
    },
    /// Train the embedding model; writes a checkpoint and a loss curve.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        loss: Option<PathBuf>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Stepwise log-likelihoods of each observed message.
    Score {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        tracks: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Delete a segment of every track and fill it back in.
    Reconstruct {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        tracks: Option<PathBuf>,
        /// First deleted step (10-minute steps from the track start).
        #[arg(long)]
        gap_start: usize,
        #[arg(long)]
        gap_len: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit per-cell score statistics on validation tracks.
    FitCells {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        tracks: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Flag abnormal tracks; writes JSON lines and GeoJSON.
    Detect {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        cells: Option<PathBuf>,
        #[arg(long)]
        tracks: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Method::Contrario)]
        method: Method,
        /// Global method threshold; default is the 5th percentile of validation track means.
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        validation: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        geojson: Option<PathBuf>,
    },
    /// Train the vessel-type classifier on hidden regimes.
    ClassifyTrain {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        tracks: Option<PathBuf>,
        #[arg(long)]
        validation: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        loss: Option<PathBuf>,
    },
    /// Per-track vessel-type probabilities.
    Classify {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        classifier: Option<PathBuf>,
        #[arg(long)]
        tracks: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cell statistics as GeoJSON and CSV grids, optionally a position density grid.
    ExportMap {
        #[arg(long)]
        cells: Option<PathBuf>,
        #[arg(long)]
        tracks: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Contrario,
    Global,
}

enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Run(Error::Io(e))
    }
}

type Out<T> = std::result::Result<T, Failure>;

struct Ctx {
    config: Option<RunConfig>,
    workdir: PathBuf,
}

impl Ctx {
    fn cfg(&self) -> Out<&RunConfig> {
        self.config.as_ref().ok_or_else(|| Failure::Usage("this command needs --config".into()))
    }

    fn path(&self, given: &Option<PathBuf>, default: &str) -> PathBuf {
        given.clone().unwrap_or_else(|| self.workdir.join(default))
    }

    /// Resolves an input path and fails with a usage error when it is absent.
    fn input(&self, given: &Option<PathBuf>, default: &str) -> Out<PathBuf> {
        let p = self.path(given, default);
        if p.exists() {
            Ok(p)
        } else {
            Err(Failure::Usage(format!("missing input {}", p.display())))
        }
    }
}

fn create(path: &Path) -> Out<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn read_tracks(path: &Path) -> Out<Vec<Track>> {
    let tracks = read_tracks_csv(File::open(path)?)?;
    check_unique_ids(&tracks)?;
    Ok(tracks)
}

fn parse_anomaly(spec: &str) -> Out<Anomaly> {
    let bad = || Failure::Usage(format!("cannot parse anomaly {spec:?}"));
    let (kind, value) = spec.split_once(':').ok_or_else(bad)?;
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
    Ok(match kind {
        "translate" => Anomaly::Translate { km: num(value)? },
        "u-turn" => Anomaly::UTurn { minutes: num(value)? },
        "speed-spike" => Anomaly::SpeedSpike { knots: num(value)? },
        "zone-swap" => {
            let (n, e) = value.split_once(',').ok_or_else(bad)?;
            Anomaly::ZoneSwap { north_km: num(n)?, east_km: num(e)? }
        }
        _ => return Err(bad()),
    })
}

fn simulate(
    ctx: &Ctx,
    scenario: &Path,
    out: &Option<PathBuf>,
    labels: &Option<PathBuf>,
    anomaly: &Option<String>,
    fraction: f64,
) -> Out<()> {
    if !scenario.exists() {
        return Err(Failure::Usage(format!("missing input {}", scenario.display())));
    }
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Failure::Usage("--anomaly-fraction must lie in [0, 1]".into()));
    }
    let s = Scenario::load(scenario)?;
    let mut fleet = s.generate()?;
    if let Some(spec) = anomaly {
        let a = parse_anomaly(spec)?;
        let mut idx: Vec<usize> = (0..fleet.len()).collect();
        idx.shuffle(&mut substream(s.seed, "anomaly", 0));
        let want = (fraction * fleet.len() as f64).round() as usize;
        let mut done = 0;
        for i in idx {
            if done == want {
                break;
            }
            // tracks without room for the perturbation stay normal
            if let Ok(t) = fleet[i].with_anomaly(a, &s.roi) {
                fleet[i] = t;
                done += 1;
            }
        }
        eprintln!("simulate: injected {done} of {want} requested anomalies");
    }
    let mut msgs: Vec<_> = fleet.iter().flat_map(|t| t.track.messages.iter().copied()).collect();
    msgs.sort_by_key(|m| (m.timestamp, m.mmsi));
    write_csv(create(&ctx.path(out, "messages.csv"))?, &msgs)?;
    let mut w = create(&ctx.path(labels, "labels.csv"))?;
    writeln!(w, "mmsi,class,vessel_type,behavior,anomaly")?;
    for t in &fleet {
        let a = t.anomaly.map(|a| serde_json::to_string(&a).expect("serialisable")).unwrap_or_default();
        writeln!(w, "{},{},{},{},\"{}\"", t.track.mmsi, t.class, t.label.as_str(), t.behavior, a.replace('"', "\"\""))?;
    }
    w.flush()?;
    eprintln!("simulate: {} vessels, {} messages", fleet.len(), msgs.len());
    Ok(())
}

fn preprocess(ctx: &Ctx, input: &Option<PathBuf>, out_dir: &Option<PathBuf>, stats: bool) -> Out<()> {
    let cfg = ctx.cfg()?;
    let input = ctx.input(input, "messages.csv")?;
    let report = parse_csv(BufReader::new(File::open(&input)?))?;
    let (tracks, st) = clean_tracks(report, &cfg.roi, &cfg.ingest);
    let dir = ctx.path(out_dir, "tracks");
    let parts = split_tracks(tracks, cfg.split, cfg.seed);
    for (name, part) in ["train", "validation", "test"].iter().zip(&parts) {
        let mut w = create(&dir.join(format!("{name}.csv")))?;
        write_tracks_csv(&mut w, part)?;
        w.flush()?;
    }
    if stats {
        let mut v = serde_json::to_value(&st).expect("serialisable");
        v["train"] = parts[0].len().into();
        v["validation"] = parts[1].len().into();
        v["test"] = parts[2].len().into();
        println!("{v}");
    }
    eprintln!("preprocess: {} tracks ({} / {} / {})", st.tracks_emitted, parts[0].len(), parts[1].len(), parts[2].len());
    Ok(())
}

fn train_cmd(
    ctx: &Ctx,
    data: &Option<PathBuf>,
    out: &Option<PathBuf>,
    loss: &Option<PathBuf>,
    lr: Option<f64>,
    epochs: Option<usize>,
) -> Out<()> {
    let cfg = ctx.cfg()?;
    let dir = ctx.input(data, "tracks")?;
    let (tp, vp) = (dir.join("train.csv"), dir.join("validation.csv"));
    for p in [&tp, &vp] {
        if !p.exists() {
            return Err(Failure::Usage(format!("missing input {}", p.display())));
        }
    }
    let train_set = training_codes(&read_tracks(&tp)?, &cfg.roi, &cfg.ingest)?;
    let val_set = training_codes(&read_tracks(&vp)?, &cfg.roi, &cfg.ingest)?;
    let mut tc = cfg.train;
    if let Some(lr) = lr {
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Failure::Usage("--lr must be finite and >= 0".into()));
        }
        tc.lr = lr;
    }
    tc.epochs = epochs.unwrap_or(tc.epochs);
    let mut model = new_model(cfg)?;
    eprintln!("train: {} train / {} validation sequences, {} parameters", train_set.len(), val_set.len(), model.param_count());
    let history = train(&mut model, &train_set, &val_set, &tc)?;
    let mut w = create(&ctx.path(loss, "loss.csv"))?;
    writeln!(w, "epoch,train_elbo,val_elbo")?;
    for r in &history {
        writeln!(w, "{},{:?},{}", r.epoch, r.train_elbo, r.val_elbo.map(|v| format!("{v:?}")).unwrap_or_default())?;
    }
    w.flush()?;
    let last = history.last().expect("epoch 0 is always recorded");
    eprintln!("train: epoch {} train ELBO/step {:.3}", last.epoch, last.train_elbo);
    model.save(ctx.path(out, "model.ckpt"))?;
    Ok(())
}

fn score(ctx: &Ctx, model: &Option<PathBuf>, tracks: &Option<PathBuf>, out: &Option<PathBuf>) -> Out<()> {
    let cfg = ctx.cfg()?;
    let model = load_model(&ctx.input(model, "model.ckpt")?, cfg)?;
    let tracks = read_tracks(&ctx.input(tracks, "tracks/test.csv")?)?;
    let scores = score_tracks(&model, &grids(&tracks, cfg.roi.dt), cfg.n_samples, cfg.seed)?;
    let mut w = create(&ctx.path(out, "scores.csv"))?;
    writeln!(w, "track_id,step,timestamp,lat,lon,logp")?;
    for t in &scores {
        for s in &t.steps {
            writeln!(w, "{},{},{},{:?},{:?},{:?}", t.track_id, s.step, s.timestamp, s.lat, s.lon, s.logp)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn reconstruct_cmd(
    ctx: &Ctx,
    model: &Option<PathBuf>,
    tracks: &Option<PathBuf>,
    gap_start: usize,
    gap_len: usize,
    out: &Option<PathBuf>,
) -> Out<()> {
    let cfg = ctx.cfg()?;
    if gap_start == 0 || gap_len == 0 {
        return Err(Failure::Usage("--gap-start and --gap-len must be >= 1".into()));
    }
    let model = load_model(&ctx.input(model, "model.ckpt")?, cfg)?;
    let tracks = read_tracks(&ctx.input(tracks, "tracks/test.csv")?)?;
    let mut w = create(&ctx.path(out, "reconstruction.csv"))?;
    writeln!(w, "track_id,step,timestamp,lat,lon,sog,cog,method,error_km")?;
    let (mut done, mut skipped) = (0, 0);
    for truth in grids(&tracks, cfg.roi.dt) {
        // the gap must leave an observed step after it
        if gap_start + gap_len >= truth.steps.len() {
            skipped += 1;
            continue;
        }
        let r = reconstruct_gap(&model, &truth.with_gap(gap_start..gap_start + gap_len), &cfg.reconstruct)?;
        for (k, method) in r.methods.iter().enumerate() {
            let m = r.message(k);
            let err = match (&truth.steps[k], method) {
                (Some(t), FillMethod::Model | FillMethod::Cv) => format!("{:?}", position_error_km(t, m)),
                _ => String::new(),
            };
            writeln!(w, "{},{k},{},{:?},{:?},{:?},{:?},{},{err}", truth.id, m.timestamp, m.lat, m.lon, m.sog, m.cog, method.as_str())?;
        }
        done += 1;
    }
    w.flush()?;
    eprintln!("reconstruct: {done} tracks filled, {skipped} too short for the gap");
    Ok(())
}

fn fit_cells_cmd(ctx: &Ctx, model: &Option<PathBuf>, tracks: &Option<PathBuf>, out: &Option<PathBuf>) -> Out<()> {
    let cfg = ctx.cfg()?;
    let model = load_model(&ctx.input(model, "model.ckpt")?, cfg)?;
    let tracks = read_tracks(&ctx.input(tracks, "tracks/validation.csv")?)?;
    let stats = fit_cells(&model, &grids(&tracks, cfg.roi.dt), &cfg.cells, cfg.n_samples, cfg.seed)?;
    let mut w = create(&ctx.path(out, "cells.csv"))?;
    stats.write_csv(&mut w)?;
    w.flush()?;
    eprintln!("fit-cells: {} cells, {} scoreable, p0 = {:.4}", stats.cells.len(), stats.scoreable_cells(), stats.p0);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn detect(
    ctx: &Ctx,
    model: &Option<PathBuf>,
    cells: &Option<PathBuf>,
    tracks: &Option<PathBuf>,
    method: Method,
    threshold: Option<f64>,
    validation: &Option<PathBuf>,
    out: &Option<PathBuf>,
    geojson: &Option<PathBuf>,
) -> Out<()> {
    let cfg = ctx.cfg()?;
    let model = load_model(&ctx.input(model, "model.ckpt")?, cfg)?;
    let tracks = read_tracks(&ctx.input(tracks, "tracks/test.csv")?)?;
    let scores = score_tracks(&model, &grids(&tracks, cfg.roi.dt), cfg.n_samples, cfg.seed)?;
    let detections: Vec<Detection> = match method {
        Method::Contrario => {
            let path = ctx.input(cells, "cells.csv")?;
            let stats = CellStats::read_csv(BufReader::new(File::open(path)?), &cfg.roi)?;
            let mut c = cfg.contrario.clone();
            c.k_sigma = stats.k_sigma;
            c.n_tests = c.n_tests.or(Some(family_size(&scores, c.window_steps)));
            scores.iter().map(|s| detect_contrario(&stats, s, &c)).collect()
        }
        Method::Global => {
            let th = match threshold {
                Some(t) => t,
                None => {
                    let val = read_tracks(&ctx.input(validation, "tracks/validation.csv")?)?;
                    let vs = score_tracks(&model, &grids(&val, cfg.roi.dt), cfg.n_samples, cfg.seed)?;
                    default_global_threshold(&vs)
                        .ok_or_else(|| Error::Config("validation tracks have no scored steps".into()))?
                }
            };
            scores.iter().map(|s| detect_global(s, th)).collect()
        }
    };
    let mut w = create(&ctx.path(out, "detections.jsonl"))?;
    for d in &detections {
        writeln!(w, "{}", serde_json::to_string(d).expect("serialisable"))?;
    }
    w.flush()?;
    let pairs: Vec<(&Detection, &TrackScores)> = detections.iter().zip(&scores).collect();
    let mut g = create(&ctx.path(geojson, "detections.geojson"))?;
    serde_json::to_writer_pretty(&mut g, &detections_geojson(&pairs)).map_err(std::io::Error::from)?;
    g.flush()?;
    let n_abn = detections.iter().filter(|d| d.verdict == ais_vrnn::anomaly::Verdict::Abnormal).count();
    eprintln!("detect: {n_abn} of {} tracks abnormal", detections.len());
    Ok(())
}

fn classify_train(
    ctx: &Ctx,
    model: &Option<PathBuf>,
    tracks: &Option<PathBuf>,
    validation: &Option<PathBuf>,
    out: &Option<PathBuf>,
    loss: &Option<PathBuf>,
) -> Out<()> {
    let cfg = ctx.cfg()?;
    let model = load_model(&ctx.input(model, "model.ckpt")?, cfg)?;
    let train_tracks = read_tracks(&ctx.input(tracks, "tracks/train.csv")?)?;
    let matrices = build_matrices(&model, &day_grids(&train_tracks, cfg.roi.dt))?;
    let (cnn, history) = train_classifier(&matrices, &cfg.cnn, &cfg.cnn_train)?;
    let mut w = create(&ctx.path(loss, "cnn_loss.csv"))?;
    writeln!(w, "epoch,loss,accuracy")?;
    for e in &history {
        writeln!(w, "{},{:?},{:?}", e.epoch, e.loss, e.accuracy)?;
    }
    w.flush()?;
    let val_path = ctx.path(validation, "tracks/validation.csv");
    if val_path.exists() {
        let val = build_matrices(&model, &day_grids(&read_tracks(&val_path)?, cfg.roi.dt))?;
        let m = evaluate(&cnn, &val)?;
        let mut w = create(&ctx.path(&None, "cnn_metrics.json"))?;
        serde_json::to_writer_pretty(&mut w, &m).map_err(std::io::Error::from)?;
        w.flush()?;
        eprintln!("classify-train: validation macro F1 {:?}", m.macro_f1);
    }
    cnn.save(ctx.path(out, "cnn.ckpt"))?;
    Ok(())
}

fn classify(
    ctx: &Ctx,
    model: &Option<PathBuf>,
    classifier: &Option<PathBuf>,
    tracks: &Option<PathBuf>,
    out: &Option<PathBuf>,
) -> Out<()> {
    let cfg = ctx.cfg()?;
    let model = load_model(&ctx.input(model, "model.ckpt")?, cfg)?;
    let cnn = CnnClassifier::load(ctx.input(classifier, "cnn.ckpt")?)?;
    let tracks = read_tracks(&ctx.input(tracks, "tracks/test.csv")?)?;
    let matrices = build_matrices(&model, &day_grids(&tracks, cfg.roi.dt))?;
    // days of one track vote by averaging probabilities
    let mut per_track: BTreeMap<u64, (Vec<f64>, usize)> = BTreeMap::new();
    for m in &matrices {
        let p = cnn.predict_proba(m)?;
        let e = per_track.entry(m.track_id).or_insert_with(|| (vec![0.0; p.len()], 0));
        e.0.iter_mut().zip(&p).for_each(|(a, b)| *a += b);
        e.1 += 1;
    }
    let mut w = create(&ctx.path(out, "predictions.csv"))?;
    writeln!(w, "track_id,predicted,prob_cargo,prob_passenger,prob_tanker,prob_tug")?;
    for (id, (sum, n)) in &per_track {
        let p: Vec<f64> = sum.iter().map(|s| s / *n as f64).collect();
        let best = (0..p.len()).fold(0, |b, i| if p[i] > p[b] { i } else { b });
        writeln!(w, "{id},{},{:?},{:?},{:?},{:?}", VesselType::CLASSES[best].as_str(), p[0], p[1], p[2], p[3])?;
    }
    w.flush()?;
    eprintln!("classify: {} tracks", per_track.len());
    Ok(())
}

fn write_grid(path: &Path, stats: &CellStats, value: impl Fn(&ais_vrnn::anomaly::CellEntry) -> f64) -> Out<()> {
    let r = &stats.grid.roi;
    let corners = [(r.lat_min, r.lon_min), (r.lat_min, r.lon_max), (r.lat_max, r.lon_min), (r.lat_max, r.lon_max)];
    let cells: Vec<(i64, i64)> = corners.iter().map(|&(a, b)| stats.grid.cell_of(a, b)).collect();
    let (imax, jmax) = cells.iter().fold((0, 0), |(i, j), c| (i.max(c.0), j.max(c.1)));
    let mut w = create(path)?;
    writeln!(
        w,
        "# cell_km={:?} lat_min={:?} lon_min={:?} columns=cell_i rows=cell_j north_to_south min_count={}",
        stats.grid.cell_km, r.lat_min, r.lon_min, stats.min_count
    )?;
    let header: Vec<String> = (0..=imax).map(|i| i.to_string()).collect();
    writeln!(w, "cell_j,{}", header.join(","))?;
    for j in (0..=jmax).rev() {
        let row: Vec<String> = (0..=imax)
            .map(|i| stats.cells.get(&(i, j)).filter(|e| e.count >= stats.min_count).map(|e| format!("{:?}", value(e))).unwrap_or_default())
            .collect();
        writeln!(w, "{j},{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

fn export_map(ctx: &Ctx, cells: &Option<PathBuf>, tracks: &Option<PathBuf>, out_dir: &Option<PathBuf>) -> Out<()> {
    let cfg = ctx.cfg()?;
    let stats = CellStats::read_csv(BufReader::new(File::open(ctx.input(cells, "cells.csv")?)?), &cfg.roi)?;
    let dir = ctx.path(out_dir, "map");
    let mut g = create(&dir.join("cells.geojson"))?;
    serde_json::to_writer_pretty(&mut g, &cells_geojson(&stats)).map_err(std::io::Error::from)?;
    g.flush()?;
    write_grid(&dir.join("mean.csv"), &stats, |e| e.mean)?;
    write_grid(&dir.join("std.csv"), &stats, |e| e.std)?;
    if let Some(t) = tracks {
        if !t.exists() {
            return Err(Failure::Usage(format!("missing input {}", t.display())));
        }
        let roi = &cfg.roi;
        let mut img = vec![vec![0u32; roi.lon_bins]; roi.lat_bins];
        for t in read_tracks(t)? {
            let codes = t.messages.iter().map(|m| encode(m, roi)).collect::<ais_vrnn::Result<Vec<_>>>()?;
            for (row, add) in img.iter_mut().zip(accumulate_image(&codes, roi)) {
                row.iter_mut().zip(add).for_each(|(a, b)| *a += b);
            }
        }
        let mut w = create(&dir.join("density.csv"))?;
        writeln!(w, "# lat_bins={} lon_bins={} rows=lat_bin south_to_north columns=lon_bin", roi.lat_bins, roi.lon_bins)?;
        for row in &img {
            writeln!(w, "{}", row.iter().map(u32::to_string).collect::<Vec<_>>().join(","))?;
        }
        w.flush()?;
    }
    eprintln!("export-map: wrote {}", dir.display());
    Ok(())
}

fn run(cli: &Cli) -> Out<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Usage("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| Failure::Usage(e.to_string()))?;
    }
    let config = match &cli.config {
        Some(p) if !p.exists() => return Err(Failure::Usage(format!("missing config {}", p.display()))),
        Some(p) => Some(RunConfig::load(p)?),
        None => None,
    };
    let workdir = cli
        .workdir
        .clone()
        .or_else(|| config.as_ref().map(|c| c.workdir.clone()))
        .unwrap_or_else(|| PathBuf::from("."));
    let ctx = Ctx { config, workdir };
    match &cli.cmd {
        Cmd::Simulate { scenario, out, labels, anomaly, anomaly_fraction } => {
            simulate(&ctx, scenario, out, labels, anomaly, *anomaly_fraction)
        }
        Cmd::Preprocess { input, out_dir, stats } => preprocess(&ctx, input, out_dir, *stats),
        Cmd::Train { data, out, loss, lr, epochs } => train_cmd(&ctx, data, out, loss, *lr, *epochs),
        Cmd::Score { model, tracks, out } => score(&ctx, model, tracks, out),
        Cmd::Reconstruct { model, tracks, gap_start, gap_len, out } => {
            reconstruct_cmd(&ctx, model, tracks, *gap_start, *gap_len, out)
        }
        Cmd::FitCells { model, tracks, out } => fit_cells_cmd(&ctx, model, tracks, out),
        Cmd::Detect { model, cells, tracks, method, threshold, validation, out, geojson } => {
            detect(&ctx, model, cells, tracks, *method, *threshold, validation, out, geojson)
        }
        Cmd::ClassifyTrain { model, tracks, validation, out, loss } => {
            classify_train(&ctx, model, tracks, validation, out, loss)
        }
        Cmd::Classify { model, classifier, tracks, out } => classify(&ctx, model, classifier, tracks, out),
        Cmd::ExportMap { cells, tracks, out_dir } => export_map(&ctx, cells, tracks, out_dir),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("{}", serde_json::json!({ "status": "error", "kind": "usage", "message": m }));
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("{}", serde_json::json!({ "status": "error", "kind": e.kind(), "message": e.to_string() }));
            ExitCode::from(1)
        }
    }
}
