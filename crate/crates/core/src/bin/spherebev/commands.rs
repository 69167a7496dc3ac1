use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use serde_json::{json, Map, Value};

use spherebev::codec;
use spherebev::ground_truth::{build_targets, rasterize, BoundingBox3D, ObjectClass};
use spherebev::grid::{BevGrid, CellIndex, GridSpec};
use spherebev::losses::{
    centerness_loss, focal_loss_grid, multi_task_loss, offset_loss, sigmoid, FocalConfig, TaskWeights,
};
use spherebev::metrics::{binarize, iou_at_ranges, percent_1dp};
use spherebev::projection::{project_batch, CameraCalibration};
use spherebev::sampling::{
    coarse_anchors, make_pillars, pull_features, run_pipeline, square_pattern, CoarseSelection, FeatureMap,
    SamplingConfig,
};
use spherebev::scene::{generate_scene, SceneSpec};
use spherebev::sync::{simulate_trace, synchronize_trace, SimulationSpec, StreamId, SyncConfig};

use crate::{Command, GridArgs, PillarArgs};

/// Bad command-line value detected after argument parsing.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

/// Context naming an input file that could not be decoded or validated.
#[derive(Debug)]
struct BadInput(PathBuf);

impl std::fmt::Display for BadInput {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0.display())
    }
}

/// 2 for unreadable or malformed input, 1 for anything else.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<BadInput>().is_some() {
        return 2;
    }
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<spherebev::Error>() {
            return if e.is_input_error() { 2 } else { 1 };
        }
        if cause.is::<std::io::Error>() || cause.is::<UsageError>() {
            return 2;
        }
    }
    1
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("cannot read {}", path.display()))
}

fn read_text(path: &Path) -> Result<String> {
    let bytes = read(path)?;
    String::from_utf8(bytes).map_err(|e| {
        let offset = e.utf8_error().valid_up_to();
        anyhow::Error::new(spherebev::Error::Format {
            offset,
            message: "invalid UTF-8".into(),
        })
        .context(BadInput(path.to_path_buf()))
    })
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("cannot write {}", path.display()))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Decodes `path` with `f`, naming the file in any error.
fn load<T>(path: &Path, f: impl FnOnce(&[u8]) -> spherebev::Result<T>) -> Result<T> {
    let bytes = read(path)?;
    f(&bytes).context(BadInput(path.to_path_buf()))
}

fn load_text<T>(path: &Path, f: impl FnOnce(&str) -> spherebev::Result<T>) -> Result<T> {
    let text = read_text(path)?;
    f(&text).context(BadInput(path.to_path_buf()))
}

fn calibration(path: &Path) -> Result<CameraCalibration> {
    load_text(path, codec::decode_calibration)
}

fn feature_map(path: &Path) -> Result<FeatureMap> {
    load(path, codec::decode_feature_map)
}

fn annotations(path: &Path) -> Result<Vec<BoundingBox3D>> {
    load_text(path, codec::decode_annotations)
}

fn raster(path: &Path) -> Result<BevGrid<f64>> {
    load(path, codec::decode_raster)
}

fn labels(path: &Path, resolution: f64) -> Result<BevGrid<u8>> {
    load(path, |b| codec::decode_pgm(b, resolution))
}

fn is_pgm(path: &Path) -> Result<bool> {
    Ok(read(path)?.starts_with(b"P5"))
}

fn grid(args: GridArgs) -> Result<GridSpec> {
    Ok(GridSpec::new(args.side, args.res)?)
}

fn class(name: Option<&str>) -> Result<Option<ObjectClass>> {
    name.map(|n| n.parse::<ObjectClass>().map_err(|e| UsageError(e.to_string()).into()))
        .transpose()
}

fn stream(name: &str) -> Result<StreamId> {
    name.parse::<StreamId>().map_err(|e| UsageError(e.to_string()).into())
}

fn sampling(pillars: PillarArgs) -> SamplingConfig {
    SamplingConfig {
        points_per_pillar: pillars.points_per_pillar,
        z_min: pillars.z_min,
        z_max: pillars.z_max,
        ..SamplingConfig::default()
    }
}

fn iou_json(pred: &BevGrid<u8>, gt: &BevGrid<u8>, ranges: &[f64]) -> Result<String> {
    let mut m = Map::new();
    for r in iou_at_ranges(pred, gt, ranges)? {
        m.insert(format!("iou_{}", r.range_meters), json!(percent_1dp(r.iou)));
    }
    Ok(serde_json::to_string_pretty(&Value::Object(m))? + "\n")
}

pub fn run(command: Command, seed: u64) -> Result<()> {
    match command {
        Command::Project { calib, points, out } => {
            let cal = calibration(&calib)?;
            let pts = load(&points, codec::decode_points)?;
            let mut csv = String::from("u,v\n");
            for px in project_batch(&pts, &cal) {
                writeln!(csv, "{},{}", px.u, px.v)?;
            }
            emit(out.as_deref(), &csv)
        }

        Command::Rasterize {
            annotations: path,
            out,
            class: name,
            centerness_out,
            grid: g,
        } => {
            let spec = grid(g)?;
            let boxes = annotations(&path)?;
            let filter = class(name.as_deref())?;
            write(&out, codec::encode_pgm(&rasterize(&boxes, &spec, filter)))?;
            if let Some(p) = centerness_out {
                write(&p, codec::encode_raster(&build_targets(&boxes, &spec, filter).centerness))?;
            }
            Ok(())
        }

        Command::Pull {
            calib,
            featmap,
            cells,
            n_coarse,
            pillars,
            grid: g,
            out,
        } => {
            let spec = grid(g)?;
            let cal = calibration(&calib)?;
            let fm = feature_map(&featmap)?;
            // No fine pass here, so k plays no part.
            let cfg = SamplingConfig { n_coarse, k: 0, ..sampling(pillars) };
            let anchors = match cells {
                Some(p) => load_text(&p, parse_cells)?,
                None => coarse_anchors(&cfg, &spec)?,
            };
            let set = make_pillars(&anchors, &cfg, &spec)?;
            let volume = pull_features(&set, &fm, &cal);
            let mut csv = String::from("row,col,point,z");
            for c in 0..fm.channels() {
                write!(csv, ",c{c}")?;
            }
            csv.push('\n');
            for (i, a) in anchors.iter().enumerate() {
                let feats = volume.pillar(i);
                for (j, p) in set.pillar(i).iter().enumerate() {
                    write!(csv, "{},{},{j},{}", a.row, a.col, p.z)?;
                    for v in feats.row(j) {
                        write!(csv, ",{v}")?;
                    }
                    csv.push('\n');
                }
            }
            emit(out.as_deref(), &csv)
        }

        Command::Pipeline {
            calib,
            featmap,
            decoder,
            n_coarse,
            k,
            fine_radius,
            dense,
            random_coarse,
            pillars,
            grid: g,
            out,
            map_out,
            gt,
            metrics_out,
            threshold,
            ranges,
        } => {
            let spec = grid(g)?;
            let cal = calibration(&calib)?;
            let fm = feature_map(&featmap)?;
            let dec = load_text(&decoder, codec::decode_decoder)?;
            let base = sampling(pillars);
            let mut cfg = if dense {
                SamplingConfig::dense(&spec)
            } else {
                SamplingConfig {
                    n_coarse,
                    k,
                    fine_pattern: square_pattern(fine_radius),
                    ..SamplingConfig::default()
                }
            };
            cfg.points_per_pillar = base.points_per_pillar;
            cfg.z_min = base.z_min;
            cfg.z_max = base.z_max;
            if random_coarse {
                cfg.coarse_selection = CoarseSelection::Random { seed };
            }
            let gt = gt.map(|p| labels(&p, spec.resolution())).transpose()?;
            let result = run_pipeline(&fm, &cal, &cfg, &spec, &dec)?;
            log::info!(
                "coarse {} anchors, kept {}, fine {} anchors",
                result.coarse.len(),
                result.kept.len(),
                result.fine.len()
            );
            write(&out, codec::encode_raster(&result.logits))?;
            let map = binarize(&result.logits, threshold);
            if let Some(p) = map_out {
                write(&p, codec::encode_pgm(&map))?;
            }
            if let Some(gt) = gt {
                let report = iou_json(&map, &gt, &ranges)?;
                match metrics_out {
                    Some(p) => write(&p, &report)?,
                    None => print!("{report}"),
                }
            }
            Ok(())
        }

        Command::Loss {
            pred,
            target,
            gamma,
            probabilities,
            annotations: boxes_path,
            pred_center,
            pred_offset_x,
            pred_offset_y,
            class: name,
            weights,
        } => {
            let pred = raster(&pred)?;
            let spec = *pred.spec();
            let target = if is_pgm(&target)? {
                labels(&target, spec.resolution())?
            } else {
                raster(&target)?.map(|&v| u8::from(v > 0.5))
            };
            let probs = if probabilities { pred } else { pred.map(|&l| sigmoid(l)) };
            let seg = focal_loss_grid(&probs, &target, FocalConfig::new(gamma)?)?;
            let weights = TaskWeights::new(weights[0], weights[1], weights[2])?;
            let (mut center, mut offset) = (0.0, 0.0);
            if let Some(p) = boxes_path {
                let targets = build_targets(&annotations(&p)?, &spec, class(name.as_deref())?);
                let fg = &targets.segmentation;
                if let Some(p) = pred_center {
                    center = centerness_loss(&raster(&p)?, &targets.centerness, fg)?;
                }
                if let (Some(px), Some(py)) = (pred_offset_x, pred_offset_y) {
                    let (ox, oy) = (raster(&px)?, raster(&py)?);
                    ox.check_same_shape(&oy)?;
                    let pred_offset = BevGrid::from_fn(*ox.spec(), |c| [*ox.get(c), *oy.get(c)]);
                    offset = offset_loss(&pred_offset, &targets.offset_dense(), fg)?;
                }
            }
            let total = multi_task_loss(seg, center, offset, weights);
            let report = json!({ "seg": seg, "center": center, "offset": offset, "total": total });
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }

        Command::Evaluate {
            pred,
            gt,
            ranges,
            threshold,
        } => {
            let map = if is_pgm(&pred)? {
                labels(&pred, spherebev::grid::DEFAULT_RESOLUTION)?
            } else {
                binarize(&raster(&pred)?, threshold)
            };
            let gt = labels(&gt, map.spec().resolution())?;
            print!("{}", iou_json(&map, &gt, &ranges)?);
            Ok(())
        }

        Command::Sync {
            trace,
            simulate,
            rates,
            duration,
            jitter,
            slop,
            queue,
            reference,
            streams,
        } => {
            let trace = if simulate {
                let rates = rates
                    .iter()
                    .map(|r| {
                        let (s, hz) = r
                            .split_once('=')
                            .ok_or_else(|| UsageError(format!("rate {r:?} is not stream=hz")))?;
                        let hz: f64 = hz.parse().map_err(|_| UsageError(format!("bad rate {hz:?}")))?;
                        Ok((stream(s)?, hz))
                    })
                    .collect::<Result<Vec<_>>>()?;
                simulate_trace(&SimulationSpec { rates, jitter, duration, seed })?
            } else {
                let path: PathBuf = trace.expect("clap requires --trace without --simulate");
                load_text(&path, codec::decode_trace)?
            };
            let cfg = SyncConfig {
                reference: stream(&reference)?,
                queue_size: queue,
                slop,
            };
            let streams = if streams.is_empty() {
                StreamId::ALL
                    .into_iter()
                    .filter(|s| *s == cfg.reference || trace.iter().any(|m| m.stream == *s))
                    .collect()
            } else {
                streams.iter().map(|s| stream(s)).collect::<Result<Vec<_>>>()?
            };
            let (frames, stats) = synchronize_trace(&trace, cfg, &streams)?;
            let order: Vec<StreamId> = std::iter::once(cfg.reference)
                .chain(streams.iter().copied().filter(|s| *s != cfg.reference))
                .collect();
            let mut out = String::from("frame,time");
            for s in &order {
                write!(out, ",{s}")?;
            }
            out.push('\n');
            for (i, f) in frames.iter().enumerate() {
                write!(out, "{i},{}", f.frame_time)?;
                for s in &order {
                    let m = f.member(*s).ok_or_else(|| anyhow!("frame {i} lacks {s}"))?;
                    write!(out, ",{}", m.timestamp)?;
                }
                out.push('\n');
            }
            let dt: Map<String, Value> = stats
                .mean_abs_dt
                .iter()
                .map(|(s, v)| (s.to_string(), json!(v)))
                .collect();
            let footer = json!({
                "reference_messages": stats.reference_messages,
                "frames": stats.frames,
                "match_rate": stats.match_rate,
                "mean_abs_dt": dt,
            });
            writeln!(out, "{footer}")?;
            print!("{out}");
            Ok(())
        }

        Command::GenScene {
            out_dir,
            n_boxes,
            channels,
            fm_height,
            fm_width,
            placement,
            grid: g,
        } => {
            let spec = SceneSpec {
                seed,
                n_boxes,
                placement,
                feature_map: (channels, fm_height, fm_width),
                grid: grid(g)?,
                ..SceneSpec::default()
            };
            let scene = generate_scene(&spec)?;
            fs::create_dir_all(&out_dir).with_context(|| format!("cannot create {}", out_dir.display()))?;
            write(&out_dir.join("annotations.json"), codec::encode_annotations(&scene.boxes))?;
            write(&out_dir.join("featmap.fmap"), codec::encode_feature_map(&scene.feature_map))?;
            write(&out_dir.join("calib.json"), codec::encode_calibration(&scene.calibration))?;
            write(&out_dir.join("decoder.json"), codec::encode_decoder(&scene.decoder))?;
            write(&out_dir.join("gt.pgm"), codec::encode_pgm(&scene.ground_truth))?;
            Ok(())
        }
    }
}

/// `row,col` lines; a `row,col` header is optional.
fn parse_cells(text: &str) -> spherebev::Result<Vec<CellIndex>> {
    let mut out = Vec::new();
    let mut offset = 0;
    for (i, line) in text.split_inclusive('\n').enumerate() {
        let at = offset;
        offset += line.len();
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.starts_with("row")) {
            continue;
        }
        let bad = || spherebev::Error::Format {
            offset: at,
            message: format!("expected `row,col`, found {line:?}"),
        };
        let (r, c) = line.split_once(',').ok_or_else(bad)?;
        let row = r.trim().parse().map_err(|_| bad())?;
        let col = c.trim().parse().map_err(|_| bad())?;
        out.push(CellIndex::new(row, col));
    }
    Ok(out)
}
