use std::fmt::Write as _;
use std::io::Write as _;
use std::net::TcpListener;
use std::path::{Path, PathBuf};

use aerodet::annotation::{self, AnnotationRecord, UNSET};
use aerodet::boxgen::box_generator;
use aerodet::codec::{encode, DenseMaps};
use aerodet::pipeline::overlay::{render_ppm, DETECTION_COLOR, TRUTH_COLOR};
use aerodet::pipeline::{bench_frames, intensity_from_maps, BenchConfig, FrameRecord, Pipeline, PipelineConfig};
use aerodet::refine::eval::{action_map, detections_from_records, evaluate_map, format_summary, pr_curve_csv, FrameTruth};
use aerodet::synth::{
    corrupt_maps, crop_dataset, frame_file_name, frame_id_from_name, generate_scene, generate_sequence,
    read_manifest, write_scenes, CropDataset, CropDatasetConfig, Scene, SceneConfig,
};
use aerodet::temporal::train::{train_toy, TrainConfig};
use aerodet::temporal::{ActionVocabulary, ActivityModel};
use aerodet::wire::{
    frame_stream, unframe_stream, DeframeEvent, ReportMessage, ReportReceiver, ReportSender, WireError,
    QUEUE_CAPACITY,
};

use crate::{data, resolve_config, usage, Cli, CliError, Command, SynthKind};

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = resolve_config(&cli.common)?;
    let out = cli.common.out.as_deref();
    match &cli.command {
        Command::Encode { input } => encode_cmd(&cfg, input, require_out(out)?),
        Command::Detect { input } => detect_cmd(&cfg, input, out),
        Command::Pipeline { input, model } => pipeline_cmd(cfg, input, model.as_deref(), out),
        Command::Eval { input, truth } => eval_cmd(&cfg, input, truth, out),
        Command::Synth { kind, flip } => synth_cmd(cfg, *kind, *flip, cli.common.frames, require_out(out)?),
        Command::Train { input, epochs } => train_cmd(&cfg, input.as_deref(), *epochs, out),
        Command::Bench { boxes, latest_only } => {
            let bench = BenchConfig { frames: cli.common.frames.unwrap_or(100), boxes: *boxes, latest_only: *latest_only };
            bench_cmd(&cfg, &bench, out)
        }
        Command::Send { input } => send_cmd(&cfg, input),
        Command::Recv { count } => recv_cmd(&cfg, *count, out),
        Command::Overlay { input, boxes, truth, frame } => {
            overlay_cmd(input, boxes.as_deref(), truth.as_deref(), *frame, require_out(out)?)
        }
    }
}

fn require_out(out: Option<&Path>) -> Result<&Path, CliError> {
    out.ok_or_else(|| usage("this command needs --out"))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| data(format!("{}: {e}", path.display())))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| data(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, bytes).map_err(|e| data(format!("{}: {e}", path.display())))
}

/// Writes to `out` when given, otherwise to stdout.
fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => write_bytes(p, text.as_bytes()),
        None => {
            print!("{text}");
            std::io::stdout().flush().map_err(data)
        }
    }
}

fn read_records(path: &Path) -> Result<Vec<AnnotationRecord>, CliError> {
    annotation::parse(&read_text(path)?).map_err(|e| data(format!("{}: {e}", path.display())))
}

fn load_maps(path: &Path) -> Result<DenseMaps, CliError> {
    DenseMaps::load(path).map_err(|e| data(format!("{}: {e}", path.display())))
}

/// Frames of a directory with `manifest.txt`, or a single maps file.
fn read_frames(input: &Path) -> Result<Vec<(u32, PathBuf)>, CliError> {
    if input.is_dir() {
        let manifest = input.join("manifest.txt");
        let entries = read_manifest(&read_text(&manifest)?);
        if entries.is_empty() {
            return Err(data(format!("{}: no frame entries", manifest.display())));
        }
        Ok(entries.into_iter().map(|(id, name)| (id, input.join(name))).collect())
    } else if input.is_file() {
        Ok(vec![(frame_id_from_name(input).unwrap_or(0), input.to_path_buf())])
    } else {
        Err(data(format!("{}: no such file or directory", input.display())))
    }
}

fn write_manifest(dir: &Path, frames: &[(u32, String)]) -> Result<(), CliError> {
    let mut m = String::from("# encoded annotation frames\n");
    for (id, name) in frames {
        let _ = writeln!(m, "frame {id} {name}");
    }
    write_bytes(&dir.join("manifest.txt"), m.as_bytes())
}

fn encode_cmd(cfg: &PipelineConfig, input: &Path, out: &Path) -> Result<(), CliError> {
    let records = read_records(input)?;
    let (w, h) = (cfg.scene.width, cfg.scene.height);
    std::fs::create_dir_all(out).map_err(|e| data(format!("{}: {e}", out.display())))?;
    let mut frames = Vec::new();
    for (id, recs) in annotation::by_frame(&records) {
        let boxes: Vec<_> = recs.iter().map(|r| r.bbox).collect();
        let maps = encode(&boxes, w, h).map_err(|e| data(format!("frame {id}: {e}")))?;
        let name = frame_file_name(id);
        maps.save(out.join(&name)).map_err(|e| data(format!("{name}: {e}")))?;
        frames.push((id, name));
    }
    write_manifest(out, &frames)?;
    log::info!("encoded {} frames ({} boxes) at {w}x{h} into {}", frames.len(), records.len(), out.display());
    Ok(())
}

fn detect_cmd(cfg: &PipelineConfig, input: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let mut records = Vec::new();
    for (id, path) in read_frames(input)? {
        let maps = load_maps(&path)?;
        let boxes = box_generator(&maps, &cfg.boxgen).map_err(usage)?;
        records.extend(boxes.into_iter().map(|b| AnnotationRecord::unlabeled(id, b)));
    }
    log::info!("decoded {} boxes", records.len());
    emit(out, &annotation::format(&records))
}

fn pipeline_cmd(
    mut cfg: PipelineConfig,
    input: &Path,
    model: Option<&Path>,
    out: Option<&Path>,
) -> Result<(), CliError> {
    if let Some(m) = model {
        cfg.model.path = Some(m.to_path_buf());
    }
    let frames = read_frames(input)?;
    let sender = match &cfg.wire.addr {
        Some(addr) => Some(ReportSender::connect(addr.as_str()).map_err(|e| data(format!("{addr}: {e}")))?),
        None => None,
    };
    let mut pipeline = Pipeline::new(cfg).map_err(data)?;
    let mut records = Vec::new();
    let mut reports = Vec::new();
    for (id, path) in frames {
        let frame = FrameRecord::from_maps(id, load_maps(&path)?);
        let o = pipeline.run_frame(&frame).map_err(data)?;
        for d in &o.detections {
            records.push(AnnotationRecord {
                frame_id: id,
                bbox: d.bbox,
                track_id: i64::from(d.track_id),
                primary_action: d.primary_action().map_or(UNSET, |k| k as i64),
                secondary_action: d.secondary_action().map_or(UNSET, |k| k as i64),
                confidence: Some(d.confidence),
            });
        }
        if let Some(s) = &sender {
            s.send(o.report.clone()).map_err(wire_error)?;
        }
        reports.push(o.report);
    }
    if let Some(s) = sender {
        let stats = s.close().map_err(wire_error)?;
        log::info!("sent {} reports ({} bytes), dropped {}", stats.sent, stats.bytes, stats.dropped);
    }
    let text = annotation::format(&records);
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| data(format!("{}: {e}", dir.display())))?;
            write_bytes(&dir.join("detections.txt"), text.as_bytes())?;
            write_bytes(&dir.join("reports.bin"), &frame_stream(&reports).map_err(data)?)?;
        }
        None => emit(None, &text)?,
    }
    log::info!("{} frames, {} detections", reports.len(), records.len());
    Ok(())
}

fn wire_error(e: WireError) -> CliError {
    match e {
        WireError::Closed => CliError::Internal(e.to_string()),
        other => data(other),
    }
}

fn eval_cmd(cfg: &PipelineConfig, input: &Path, truth: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let vocab = ActionVocabulary::default();
    let preds = detections_from_records(&read_records(input)?, vocab.n_primary(), vocab.n_secondary());
    let mut gt = FrameTruth::new();
    for r in read_records(truth)? {
        gt.entry(r.frame_id).or_default().push(r);
    }
    let m = evaluate_map(&preds, &gt, &cfg.eval);
    let (pa, sa) = action_map(&preds, &gt, &cfg.eval);
    print!("{}", format_summary(m.ap, pa, sa));
    println!("predictions={} ground_truth={}", m.predictions, m.ground_truth);
    if let Some(p) = out {
        write_bytes(p, pr_curve_csv(&m.curve).as_bytes())?;
    }
    Ok(())
}

fn synth_cmd(
    cfg: PipelineConfig,
    kind: SynthKind,
    flip: Option<f64>,
    frames: Option<usize>,
    out: &Path,
) -> Result<(), CliError> {
    let mut scene = cfg.scene.clone();
    if let Some(p) = flip {
        scene.seg_flip_prob = p;
    }
    scene.validate().map_err(usage)?;
    match kind {
        SynthKind::Scene => {
            let scenes = independent_scenes(&scene, frames.unwrap_or(1))?;
            write_scenes(out, &scenes, &scene).map_err(data)?;
            log::info!("wrote {} scenes to {}", scenes.len(), out.display());
        }
        SynthKind::Sequence => {
            let scenes = generate_sequence(&scene, frames.unwrap_or(100)).map_err(data)?;
            write_scenes(out, &scenes, &scene).map_err(data)?;
            log::info!("wrote a {}-frame sequence to {}", scenes.len(), out.display());
        }
        SynthKind::Crops => {
            let crops = CropDatasetConfig {
                feature_dim: aerodet::pipeline::model_input_size(&cfg),
                seed: scene.seed,
                ..CropDatasetConfig::default()
            };
            let ds = crop_dataset(&crops);
            ds.save(out).map_err(data)?;
            log::info!("wrote {} train and {} test sequences to {}", ds.train.len(), ds.test.len(), out.display());
        }
    }
    Ok(())
}

/// Scene `k` draws from seed `seed + k` and carries frame id `k`.
fn independent_scenes(cfg: &SceneConfig, n: usize) -> Result<Vec<Scene>, CliError> {
    (0..n)
        .map(|k| {
            let c = SceneConfig { seed: cfg.seed.wrapping_add(k as u64), ..cfg.clone() };
            let mut s = generate_scene(&c).map_err(data)?;
            s.frame_id = k as u32;
            if c.reg_noise > 0.0 || c.seg_flip_prob > 0.0 {
                s.maps = corrupt_maps(&s.maps, c.reg_noise, c.seg_flip_prob, c.seed);
            }
            Ok(s)
        })
        .collect()
}

fn train_cmd(cfg: &PipelineConfig, input: Option<&Path>, epochs: Option<usize>, out: Option<&Path>) -> Result<(), CliError> {
    let ds = match input {
        Some(p) => CropDataset::load(p).map_err(|e| data(format!("{}: {e}", p.display())))?,
        None => crop_dataset(&CropDatasetConfig {
            feature_dim: aerodet::pipeline::model_input_size(cfg),
            seed: cfg.scene.seed,
            ..CropDatasetConfig::default()
        }),
    };
    let c = &ds.config;
    let mut model = ActivityModel::new(c.feature_dim, cfg.model.hidden, c.n_primary, c.n_secondary, cfg.model.seed);
    let tc = TrainConfig { epochs: epochs.unwrap_or(500), seed: cfg.model.seed, ..TrainConfig::default() };
    let report = train_toy(&mut model, &ds, &tc).map_err(data)?;
    println!("initial_loss={:.6}", report.initial_loss);
    println!("final_loss={:.6}", report.epoch_losses.last().copied().unwrap_or(report.initial_loss));
    println!("train_primary_accuracy={:.4}", report.train.primary);
    println!("test_primary_accuracy={:.4}", report.test.primary);
    println!("test_secondary_accuracy={:.4}", report.test.secondary);
    println!("test_confidence_accuracy={:.4}", report.test.confidence);
    println!("moving_average_non_increasing={}", report.moving_average_non_increasing(tc.moving_average));
    if let Some(p) = out {
        model.save(p).map_err(|e| data(format!("{}: {e}", p.display())))?;
    }
    Ok(())
}

fn bench_cmd(cfg: &PipelineConfig, bench: &BenchConfig, out: Option<&Path>) -> Result<(), CliError> {
    let report = bench_frames(cfg, bench).map_err(data)?;
    log::info!("processed {} frames, dropped {}", report.processed, report.dropped);
    emit(out, &report.to_csv())
}

fn send_cmd(cfg: &PipelineConfig, input: &Path) -> Result<(), CliError> {
    let addr = cfg.wire.addr.as_deref().ok_or_else(|| usage("send needs --addr"))?;
    let bytes = std::fs::read(input).map_err(|e| data(format!("{}: {e}", input.display())))?;
    let unframed = unframe_stream(&bytes);
    if unframed.skipped_total() > 0 {
        log::warn!("{}: skipped {} unreadable bytes", input.display(), unframed.skipped_total());
    }
    let stream = std::net::TcpStream::connect(addr).map_err(|e| data(format!("{addr}: {e}")))?;
    // replaying a file: size the queue so nothing is dropped
    let sender = ReportSender::spawn(stream, unframed.messages.len().max(QUEUE_CAPACITY));
    for m in unframed.messages {
        sender.send(m).map_err(wire_error)?;
    }
    let stats = sender.close().map_err(wire_error)?;
    println!("sent={} bytes={} dropped={}", stats.sent, stats.bytes, stats.dropped);
    Ok(())
}

fn describe(m: &ReportMessage, len: usize) -> String {
    format!(
        "frame={} timestamp={} detections={} truncated={} bytes={}",
        m.frame_id,
        m.timestamp,
        m.detections.len(),
        m.truncated(),
        len
    )
}

fn recv_cmd(cfg: &PipelineConfig, count: Option<usize>, out: Option<&Path>) -> Result<(), CliError> {
    let addr = cfg.wire.addr.as_deref().ok_or_else(|| usage("recv needs --addr"))?;
    let listener = TcpListener::bind(addr).map_err(|e| data(format!("{addr}: {e}")))?;
    let local = listener.local_addr().map_err(data)?;
    eprintln!("listening on {local}");
    let (stream, peer) = listener.accept().map_err(data)?;
    log::info!("connection from {peer}");
    let mut rx = ReportReceiver::new(stream);
    let mut got = Vec::new();
    while count.is_none_or(|n| got.len() < n) {
        match rx.next_event().map_err(data)? {
            Some(DeframeEvent::Message(m)) => {
                println!("{}", describe(&m, aerodet::wire::encoded_len(m.detections.len())));
                got.push(m);
            }
            Some(DeframeEvent::Skipped(n)) => log::warn!("skipped {n} bytes while resynchronizing"),
            None => break,
        }
    }
    println!("messages={} skipped_bytes={}", got.len(), rx.skipped_total());
    if let Some(p) = out {
        write_bytes(p, &frame_stream(&got).map_err(data)?)?;
    }
    Ok(())
}

fn overlay_cmd(
    input: &Path,
    boxes: Option<&Path>,
    truth: Option<&Path>,
    frame: Option<u32>,
    out: &Path,
) -> Result<(), CliError> {
    let maps = load_maps(input)?;
    let id = frame.or_else(|| frame_id_from_name(input)).unwrap_or(0);
    let mut drawn = Vec::new();
    for (path, color) in [(truth, TRUTH_COLOR), (boxes, DETECTION_COLOR)] {
        if let Some(p) = path {
            drawn.extend(read_records(p)?.into_iter().filter(|r| r.frame_id == id).map(|r| (r.bbox, color)));
        }
    }
    write_bytes(out, &render_ppm(&intensity_from_maps(&maps), &drawn))?;
    log::info!("drew {} boxes for frame {id} into {}", drawn.len(), out.display());
    Ok(())
}
