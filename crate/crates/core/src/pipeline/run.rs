use std::fmt::Write as _;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Instant;

use super::eval::{evaluate, format_report, summary_json, EvalReport};
use super::{
    load_sequence, map_path, select_neighbors, RunConfig, CONFIG_FILE, FRAMES_FILE, GROUND_TRUTH_FILE, MAPPING_LOG,
    MAPS_DIR, REPORT_FILE, SUMMARY_FILE, TRACKING_LOG, TRAJECTORY_FILE,
};
use crate::dataset::{save_trajectory, write_intrinsics, RgbdFrame, Sequence, INTRINSICS_FILE};
use crate::error::{Error, Result};
use crate::mapper::{map_frame, quantize_map, read_map, write_map, MapperConfig, PixelGaussianMap};
use crate::tracker::{
    build_local_set, gicp_align, init_pose_constant_speed, init_pose_render, GlobalGeomSet, InitMode,
};
use crate::Pose;

/// How a frame's initial pose was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitUsed {
    /// Frame 0: identity or the ground-truth prior.
    First,
    ConstantSpeed,
    RenderInit,
    /// Render-based refinement failed; constant speed was used.
    RenderFallback,
}

impl InitUsed {
    fn as_str(self) -> &'static str {
        match self {
            InitUsed::First => "first",
            InitUsed::ConstantSpeed => "constant_speed",
            InitUsed::RenderInit => "render_init",
            InitUsed::RenderFallback => "render_fallback",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "first" => InitUsed::First,
            "constant_speed" => InitUsed::ConstantSpeed,
            "render_init" => InitUsed::RenderInit,
            "render_fallback" => InitUsed::RenderFallback,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub index: usize,
    pub timestamp: f64,
    pub init: InitUsed,
    pub gicp_iterations: usize,
    pub inliers: usize,
    pub converged: bool,
    /// Alignment failed; the pose is the initializer output.
    pub tracking_failed: bool,
    pub pose: Pose,
}

impl FrameRecord {
    fn to_line(&self) -> String {
        let mut s = format!(
            "{} {:?} {} {} {} {} {}",
            self.index,
            self.timestamp,
            self.init.as_str(),
            self.gicp_iterations,
            self.inliers,
            self.converged,
            self.tracking_failed
        );
        for x in self.pose.to_array12() {
            let _ = write!(s, " {x:?}");
        }
        s
    }

    fn parse(line: &str) -> Option<Self> {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 19 {
            return None;
        }
        let mut pose = [0.0; 12];
        for (p, s) in pose.iter_mut().zip(&f[7..]) {
            *p = s.parse().ok()?;
        }
        Some(Self {
            index: f[0].parse().ok()?,
            timestamp: f[1].parse().ok()?,
            init: InitUsed::parse(f[2])?,
            gicp_iterations: f[3].parse().ok()?,
            inliers: f[4].parse().ok()?,
            converged: f[5].parse().ok()?,
            tracking_failed: f[6].parse().ok()?,
            pose: Pose::from_array12(&pose),
        })
    }
}

const FRAMES_HEADER: &str =
    "# index timestamp init gicp_iterations inliers converged tracking_failed pose (rotation row-major, translation)\n";

pub fn read_frame_records(path: &Path) -> Result<Vec<FrameRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let rec = FrameRecord::parse(line).ok_or_else(|| Error::format(path, format!("line {}: malformed record", n + 1)))?;
        if rec.index != out.len() {
            return Err(Error::format(path, format!("line {}: expected frame {}, found {}", n + 1, out.len(), rec.index)));
        }
        out.push(rec);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub run_dir: PathBuf,
    pub records: Vec<FrameRecord>,
    /// Present when evaluation is enabled.
    pub report: Option<EvalReport>,
    /// Frames resumed from a previous session.
    pub resumed_frames: usize,
    pub elapsed_s: f64,
}

impl RunOutcome {
    pub fn tracking_failures(&self) -> usize {
        self.records.iter().filter(|r| r.tracking_failed).count()
    }

    pub fn poses(&self) -> Vec<Pose> {
        self.records.iter().map(|r| r.pose).collect()
    }
}

struct MapSummary {
    index: usize,
    neighbors: Vec<usize>,
    first_loss: f64,
    last_loss: f64,
    holes_from_neighbors: usize,
    holes_inpainted: usize,
}

/// Finalized maps, published once per frame.
struct MapStore {
    slots: Mutex<Vec<Option<Arc<PixelGaussianMap>>>>,
    failure: Mutex<Option<String>>,
    ready: Condvar,
}

impl MapStore {
    fn new(n: usize) -> Self {
        Self {
            slots: Mutex::new(vec![None; n]),
            failure: Mutex::new(None),
            ready: Condvar::new(),
        }
    }

    fn publish(&self, index: usize, map: PixelGaussianMap) {
        self.slots.lock().expect("map store poisoned")[index] = Some(Arc::new(map));
        self.ready.notify_all();
    }

    fn fail(&self, message: String) {
        let mut f = self.failure.lock().expect("map store poisoned");
        f.get_or_insert(message);
        drop(f);
        // Taking the slot lock orders the notification after any waiter's check.
        let _slots = self.slots.lock().expect("map store poisoned");
        self.ready.notify_all();
    }

    fn failure(&self) -> Option<String> {
        self.failure.lock().expect("map store poisoned").clone()
    }

    /// Blocks until frame `index` is mapped, or any mapping job has failed.
    fn wait(&self, index: usize) -> Result<Arc<PixelGaussianMap>> {
        let mut slots = self.slots.lock().expect("map store poisoned");
        loop {
            if let Some(m) = &slots[index] {
                return Ok(m.clone());
            }
            if let Some(msg) = self.failure() {
                return Err(Error::InvalidInput(format!("mapping aborted: {msg}")));
            }
            slots = self.ready.wait(slots).expect("map store poisoned");
        }
    }
}

struct MapJob {
    index: usize,
    pose: Pose,
    neighbors: Vec<usize>,
}

fn map_job(
    job: &MapJob,
    frames: &[RgbdFrame],
    store: &MapStore,
    cfg: &MapperConfig,
    run_dir: &Path,
) -> Result<MapSummary> {
    let neighbor_maps = job
        .neighbors
        .iter()
        .map(|&j| store.wait(j))
        .collect::<Result<Vec<_>>>()?;
    let pairs: Vec<(&RgbdFrame, &PixelGaussianMap)> =
        job.neighbors.iter().zip(&neighbor_maps).map(|(&j, m)| (&frames[j], m.as_ref())).collect();
    let outcome = map_frame(&frames[job.index], &job.pose, &pairs, cfg)?;
    let map = quantize_map(&outcome.map);
    write_map(&map_path(run_dir, job.index), &map)?;
    store.publish(job.index, map);
    Ok(MapSummary {
        index: job.index,
        neighbors: job.neighbors.clone(),
        first_loss: outcome.losses.first().copied().unwrap_or(f64::NAN),
        last_loss: outcome.losses.last().copied().unwrap_or(f64::NAN),
        holes_from_neighbors: outcome.holes_from_neighbors,
        holes_inpainted: outcome.holes_inpainted,
    })
}

/// Persisted records and maps of an interrupted run that can be continued.
fn resume_state(cfg: &RunConfig, seq: &Sequence, run_dir: &Path) -> Result<(Vec<FrameRecord>, Vec<PixelGaussianMap>)> {
    let frames_file = run_dir.join(FRAMES_FILE);
    if !frames_file.is_file() {
        return Ok((Vec::new(), Vec::new()));
    }
    let config_file = run_dir.join(CONFIG_FILE);
    let previous = RunConfig::from_file(&config_file)?;
    let comparable = |c: &RunConfig| RunConfig {
        max_frames: None,
        workers: 1,
        resume: false,
        eval: true,
        output: PathBuf::new(),
        ..c.clone()
    };
    if comparable(&previous) != comparable(cfg) {
        return Err(Error::Config(format!(
            "cannot resume {}: configuration differs from the persisted run",
            run_dir.display()
        )));
    }
    let mut records = read_frame_records(&frames_file)?;
    let mut maps = Vec::new();
    for rec in &records {
        let path = map_path(run_dir, rec.index);
        if rec.index >= seq.frames.len() || !path.is_file() {
            break;
        }
        if seq.frames[rec.index].timestamp != rec.timestamp {
            return Err(Error::format(&frames_file, format!("frame {} timestamp does not match the dataset", rec.index)));
        }
        maps.push(read_map(&path)?);
    }
    records.truncate(maps.len());
    Ok((records, maps))
}

fn append_record(file: &mut File, path: &Path, rec: &FrameRecord) -> Result<()> {
    writeln!(file, "{}", rec.to_line())
        .and_then(|_| file.flush())
        .map_err(|e| Error::io(path, e))
}

/// Tracks every frame in order, maps frames on `cfg.workers` threads, persists the run
/// directory and, when enabled, evaluates it.
pub fn run_slam(cfg: &RunConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let seq = load_sequence(cfg)?;
    let run_dir = cfg.output.clone();
    let maps_dir = run_dir.join(MAPS_DIR);
    fs::create_dir_all(&maps_dir).map_err(|e| Error::io(&maps_dir, e))?;

    let (mut records, resumed_maps) = if cfg.resume {
        resume_state(cfg, &seq, &run_dir)?
    } else {
        for entry in fs::read_dir(&maps_dir).map_err(|e| Error::io(&maps_dir, e))?.flatten() {
            if entry.path().extension().is_some_and(|e| e == "pxgm") {
                fs::remove_file(entry.path()).map_err(|e| Error::io(entry.path(), e))?;
            }
        }
        (Vec::new(), Vec::new())
    };
    let resumed_frames = records.len();

    let stored = RunConfig {
        resume: false,
        ..cfg.clone()
    };
    let config_file = run_dir.join(CONFIG_FILE);
    fs::write(&config_file, stored.to_text()).map_err(|e| Error::io(&config_file, e))?;
    let k = seq.frames[0].intrinsics;
    write_intrinsics(&run_dir.join(INTRINSICS_FILE), &k)?;

    let frames_file = run_dir.join(FRAMES_FILE);
    let mut frames_out = File::create(&frames_file).map_err(|e| Error::io(&frames_file, e))?;
    frames_out.write_all(FRAMES_HEADER.as_bytes()).map_err(|e| Error::io(&frames_file, e))?;
    for rec in &records {
        append_record(&mut frames_out, &frames_file, rec)?;
    }

    let n = seq.frames.len();
    let mapper_cfg = cfg.mapper_config();
    let store = MapStore::new(n);
    for m in resumed_maps {
        let i = m.frame_index;
        store.publish(i, m);
    }

    // Replaying the persisted poses rebuilds the tracking state exactly.
    let mut global = GlobalGeomSet::new(cfg.tracker.voxel_size);
    for rec in &records {
        let local = build_local_set(&seq.frames[rec.index], &cfg.tracker)?;
        global.update(&local, &rec.pose);
    }

    let (job_tx, job_rx) = mpsc::channel::<MapJob>();
    let job_rx = Mutex::new(job_rx);
    let summaries = Mutex::new(Vec::new());
    let tracking: Result<()> = std::thread::scope(|scope| {
        for _ in 0..cfg.workers {
            scope.spawn(|| loop {
                let job = match job_rx.lock().expect("job queue poisoned").recv() {
                    Ok(job) => job,
                    Err(_) => break,
                };
                if store.failure().is_some() {
                    continue;
                }
                match map_job(&job, &seq.frames, &store, &mapper_cfg, &run_dir) {
                    Ok(s) => summaries.lock().expect("summaries poisoned").push(s),
                    Err(e) => store.fail(format!("frame {}: {e}", job.index)),
                }
            });
        }

        let result = (|| -> Result<()> {
            let mut poses: Vec<Pose> = records.iter().map(|r| r.pose).collect();
            for i in records.len()..n {
                let frame = &seq.frames[i];
                let local = build_local_set(frame, &cfg.tracker)?;
                let rec = if i == 0 {
                    let pose = match seq.ground_truth[0] {
                        Some(gt) if cfg.gt_prior => gt,
                        _ => Pose::identity(),
                    };
                    FrameRecord {
                        index: 0,
                        timestamp: frame.timestamp,
                        init: InitUsed::First,
                        gicp_iterations: 0,
                        inliers: 0,
                        converged: true,
                        tracking_failed: false,
                        pose,
                    }
                } else {
                    let speed = if i == 1 {
                        poses[0]
                    } else {
                        init_pose_constant_speed(&poses[i - 1], &poses[i - 2])
                    };
                    let (init, used) = match cfg.tracker.init_mode {
                        InitMode::ConstantSpeed => (speed, InitUsed::ConstantSpeed),
                        InitMode::RenderInit => {
                            let prev = store.wait(i - 1)?;
                            let r = init_pose_render(frame, &prev, &speed, cfg.tracker.render_init_iters, &mapper_cfg)?;
                            if r.failed {
                                (speed, InitUsed::RenderFallback)
                            } else {
                                (r.pose, InitUsed::RenderInit)
                            }
                        }
                    };
                    let g = gicp_align(&local, &global, &init, &cfg.tracker);
                    FrameRecord {
                        index: i,
                        timestamp: frame.timestamp,
                        init: used,
                        gicp_iterations: g.iterations,
                        inliers: g.inliers,
                        converged: g.converged,
                        tracking_failed: g.failed,
                        pose: if g.failed { init } else { g.pose },
                    }
                };
                global.update(&local, &rec.pose);
                poses.push(rec.pose);
                append_record(&mut frames_out, &frames_file, &rec)?;
                let job = MapJob {
                    index: i,
                    pose: rec.pose,
                    neighbors: select_neighbors(i, &poses, mapper_cfg.neighbors),
                };
                records.push(rec);
                if job_tx.send(job).is_err() {
                    break;
                }
                if let Some(msg) = store.failure() {
                    return Err(Error::InvalidInput(format!("mapping aborted: {msg}")));
                }
            }
            Ok(())
        })();
        drop(job_tx);
        if result.is_err() {
            store.fail("tracking stopped".into());
        }
        result
    });
    if let Some(msg) = store.failure() {
        if tracking.is_ok() || msg != "tracking stopped" {
            return Err(Error::InvalidInput(format!("mapping failed: {msg}")));
        }
    }
    tracking?;

    let mut summaries = summaries.into_inner().expect("summaries poisoned");
    summaries.sort_by_key(|s| s.index);
    write_logs(&run_dir, &records, &summaries, resumed_frames)?;

    let poses: Vec<Pose> = records.iter().map(|r| r.pose).collect();
    let stamps: Vec<f64> = records.iter().map(|r| r.timestamp).collect();
    save_trajectory(&poses, &stamps, &run_dir.join(TRAJECTORY_FILE))?;
    let gt: Vec<(Pose, f64)> = seq
        .ground_truth
        .iter()
        .zip(&stamps)
        .filter_map(|(g, &t)| g.map(|g| (g, t)))
        .collect();
    if !gt.is_empty() {
        let (p, t): (Vec<Pose>, Vec<f64>) = gt.into_iter().unzip();
        save_trajectory(&p, &t, &run_dir.join(GROUND_TRUTH_FILE))?;
    }

    let elapsed_s = start.elapsed().as_secs_f64();
    let report = if cfg.eval {
        let report = evaluate(&run_dir, &seq, cfg)?;
        let path = run_dir.join(REPORT_FILE);
        fs::write(&path, format_report(&report)).map_err(|e| Error::io(&path, e))?;
        let path = run_dir.join(SUMMARY_FILE);
        fs::write(&path, summary_json(&report, Some(elapsed_s))).map_err(|e| Error::io(&path, e))?;
        Some(report)
    } else {
        None
    };
    Ok(RunOutcome {
        run_dir,
        records,
        report,
        resumed_frames,
        elapsed_s,
    })
}

fn write_logs(run_dir: &Path, records: &[FrameRecord], maps: &[MapSummary], resumed: usize) -> Result<()> {
    let mut log = String::from("# frame init gicp_iterations inliers converged status tx ty tz\n");
    for r in records {
        let t = r.pose.translation;
        let _ = writeln!(
            log,
            "{:6} {:15} {:3} {:7} {:5} {:6} {:.6} {:.6} {:.6}",
            r.index,
            r.init.as_str(),
            r.gicp_iterations,
            r.inliers,
            r.converged,
            if r.tracking_failed { "FAILED" } else { "ok" },
            t.x,
            t.y,
            t.z
        );
    }
    let failed = records.iter().filter(|r| r.tracking_failed).count();
    let _ = writeln!(log, "# {} frames, {failed} tracking failures", records.len());
    let path = run_dir.join(TRACKING_LOG);
    fs::write(&path, log).map_err(|e| Error::io(&path, e))?;

    let path = run_dir.join(MAPPING_LOG);
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| Error::io(&path, e))?;
    let mut text = format!("# session from frame {resumed}: frame neighbors first_loss last_loss holes_from_neighbors holes_inpainted\n");
    for m in maps {
        let nb: Vec<String> = m.neighbors.iter().map(|j| j.to_string()).collect();
        let _ = writeln!(
            text,
            "{} [{}] {:.6} {:.6} {} {}",
            m.index,
            nb.join(","),
            m.first_loss,
            m.last_loss,
            m.holes_from_neighbors,
            m.holes_inpainted
        );
    }
    file.write_all(text.as_bytes()).map_err(|e| Error::io(&path, e))
}
