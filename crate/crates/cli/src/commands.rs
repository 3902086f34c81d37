//! Subcommand bodies. Each one loads and validates every input before it
//! creates any output.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use flowmno::detect::Detection;
use flowmno::farneback::estimate_flow;
use flowmno::gvo::{simulate_navigation, ObstaclePrediction, Trace};
use flowmno::io::{
    flow_to_rgb, load_detections, load_flo, load_pgm, load_tracks, parse_key_values, save_detections, save_flo,
    save_pgm, save_ppm, save_trace, save_tracks,
};
use flowmno::mno::{load_checkpoint, save_checkpoint, train_on_split, History, LossKind, MnoModel};
use flowmno::synth::{ground_truth_flow, make_dataset, SceneConfig};
use flowmno::trajectory::{evaluate, tracks_from_fields, Evaluation};
use flowmno::{FlowField, Vec2};

use crate::config::RunConfig;
use crate::scenario::{parse_scenario, ScenarioFile};
use crate::viz;

pub const MANIFEST: &str = "manifest.txt";

pub fn scene_dir_name(i: usize) -> String {
    format!("scene_{i:03}")
}

pub fn frame_name(t: usize) -> String {
    format!("frame_{t:04}.pgm")
}

pub fn flow_name(t: usize) -> String {
    format!("flow_{t:04}.flo")
}

/// Writes into a hidden sibling directory and renames it into place, so a
/// failure never leaves a partial tree at `out`.
fn write_tree(out: &Path, fill: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    if out.exists() {
        let empty = out.is_dir() && fs::read_dir(out)?.next().is_none();
        ensure!(empty, "{} already exists and is not an empty directory", out.display());
    }
    let parent = match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let name = out
        .file_name()
        .with_context(|| format!("{} has no directory name", out.display()))?;
    let staging = parent.join(format!(".{}.partial-{}", name.to_string_lossy(), std::process::id()));
    fs::create_dir_all(&staging).with_context(|| format!("cannot create {}", staging.display()))?;
    if let Err(e) = fill(&staging) {
        let _ = fs::remove_dir_all(&staging);
        return Err(e);
    }
    if out.exists() {
        fs::remove_dir(out)?;
    }
    fs::rename(&staging, out).with_context(|| format!("cannot move output into {}", out.display()))?;
    Ok(())
}

pub fn gen_data(cfg: &RunConfig, out: &Path) -> Result<()> {
    let data = make_dataset(&cfg.scene, cfg.n_scenes)?;
    let s = &cfg.scene;
    let names = |ids: &[usize]| ids.iter().map(|&i| scene_dir_name(i)).collect::<Vec<_>>().join(" ");
    let mut manifest = String::from("# synthetic crowd dataset\n");
    writeln!(manifest, "seed = {}", cfg.seed)?;
    writeln!(manifest, "n_scenes = {}", data.scenes.len())?;
    writeln!(manifest, "width = {}", s.width)?;
    writeln!(manifest, "height = {}", s.height)?;
    writeln!(manifest, "n_frames = {}", s.n_frames)?;
    writeln!(manifest, "n_agents = {}", s.n_agents)?;
    writeln!(manifest, "agent_radius = {}", s.agent_radius)?;
    writeln!(manifest, "train = {}", names(&data.split.train))?;
    writeln!(manifest, "val = {}", names(&data.split.val))?;
    writeln!(manifest, "test = {}", names(&data.split.test))?;

    write_tree(out, |root| {
        for (i, scene) in data.scenes.iter().enumerate() {
            let dir = root.join(scene_dir_name(i));
            fs::create_dir(&dir)?;
            for (t, frame) in scene.frames.iter().enumerate() {
                save_pgm(frame, dir.join(frame_name(t)))?;
            }
            for (t, flow) in scene.flows.iter().enumerate() {
                save_flo(flow, dir.join(flow_name(t)))?;
            }
            save_tracks(&scene.tracks, dir.join("tracks.tsv"))?;
            let dets: Vec<Detection> = scene.detections.iter().flatten().cloned().collect();
            save_detections(&dets, dir.join("detections.tsv"))?;
        }
        fs::write(root.join(MANIFEST), &manifest)?;
        Ok(())
    })?;
    println!(
        "wrote {} scenes ({} train / {} val / {} test) to {}",
        data.scenes.len(),
        data.split.train.len(),
        data.split.val.len(),
        data.split.test.len(),
        out.display()
    );
    Ok(())
}

/// The training and validation flows of a generated dataset.
#[derive(Debug)]
pub struct DatasetDir {
    pub width: usize,
    pub height: usize,
    pub train: Vec<String>,
    pub val: Vec<String>,
    /// Flow sequence per scene name.
    pub flows: BTreeMap<String, Vec<FlowField>>,
}

pub fn load_dataset(dir: &Path) -> Result<DatasetDir> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).with_context(|| format!("no dataset manifest at {}", path.display()))?;
    let mut kv: BTreeMap<String, String> = BTreeMap::new();
    for (_, k, v) in parse_key_values(&text)? {
        kv.insert(k, v);
    }
    let get = |k: &str| kv.get(k).with_context(|| format!("manifest lacks `{k}`"));
    let int = |k: &str| -> Result<usize> { get(k)?.parse().with_context(|| format!("manifest `{k}`")) };
    let list = |k: &str| -> Result<Vec<String>> { Ok(get(k)?.split_whitespace().map(String::from).collect()) };
    let (width, height, n_frames) = (int("width")?, int("height")?, int("n_frames")?);
    let (train, val) = (list("train")?, list("val")?);
    let mut flows = BTreeMap::new();
    for name in train.iter().chain(&val) {
        let seq = (0..n_frames.saturating_sub(1))
            .map(|t| {
                let p = dir.join(name).join(flow_name(t));
                let f = load_flo(&p).with_context(|| format!("reading {}", p.display()))?;
                ensure!(
                    f.dims() == (width, height),
                    "{} is {}x{}, manifest says {width}x{height}",
                    p.display(),
                    f.width(),
                    f.height()
                );
                Ok(f)
            })
            .collect::<Result<Vec<_>>>()?;
        flows.insert(name.clone(), seq);
    }
    Ok(DatasetDir {
        width,
        height,
        train,
        val,
        flows,
    })
}

impl DatasetDir {
    /// Consecutive `(flow_t, flow_{t+1})` pairs of the named scenes.
    pub fn pairs(&self, names: &[String]) -> Vec<(&FlowField, &FlowField)> {
        names
            .iter()
            .flat_map(|n| self.flows[n].windows(2).map(|w| (&w[0], &w[1])))
            .collect()
    }
}

pub fn flow(cfg: &RunConfig, prev: &Path, next: &Path, out: &Path, viz_out: Option<&Path>) -> Result<()> {
    let a = load_pgm(prev).with_context(|| format!("reading {}", prev.display()))?;
    let b = load_pgm(next).with_context(|| format!("reading {}", next.display()))?;
    ensure!(
        a.dims() == b.dims(),
        "frame dimensions differ: {}x{} vs {}x{}",
        a.width(),
        a.height(),
        b.width(),
        b.height()
    );
    let field = estimate_flow(&a, &b, &cfg.farneback)?;
    save_flo(&field, out)?;
    if let Some(p) = viz_out {
        save_ppm(field.width(), field.height(), &flow_to_rgb(&field), p)?;
    }
    println!(
        "flow {}x{} max |v| {:.3} px -> {}",
        field.width(),
        field.height(),
        field.max_magnitude(),
        out.display()
    );
    Ok(())
}

pub fn history_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("history.csv")
}

pub fn history_csv(history: &History) -> String {
    let mut s = String::from("epoch,lr,train_loss,val_loss\n");
    for e in &history.epochs {
        let _ = writeln!(s, "{},{},{},{}", e.epoch, e.lr, e.train_loss, e.val_loss);
    }
    s
}

pub fn train(cfg: &RunConfig, data_dir: &Path, out: &Path) -> Result<()> {
    let data = load_dataset(data_dir)?;
    let train_pairs = data.pairs(&data.train);
    let val_pairs = data.pairs(&data.val);
    let t = &cfg.train;
    ensure!(
        train_pairs.len() >= t.batch_size,
        "batch size {} is larger than the training split ({} pairs)",
        t.batch_size,
        train_pairs.len()
    );
    let model_cfg = cfg.model_config(data.height, data.width);
    let model = MnoModel::new(model_cfg.clone())?;
    let loss = match cfg.loss.kind {
        LossKind::Mse => "mse".to_string(),
        LossKind::Sobolev => format!("sobolev(k={})", cfg.loss.k),
    };
    println!(
        "epochs={} batch={} lr={} step={} gamma={} loss={loss} seed={}",
        t.epochs, t.batch_size, t.learning_rate, t.scheduler_step, t.scheduler_gamma, cfg.seed
    );
    println!(
        "grid={}x{} modes={}x{} width={} blocks={} hidden={} params={} train_pairs={} val_pairs={}",
        data.width,
        data.height,
        model_cfg.modes_x,
        model_cfg.modes_y,
        model_cfg.width,
        model_cfg.num_blocks,
        model_cfg.projection_hidden,
        model.n_params(),
        train_pairs.len(),
        val_pairs.len()
    );
    let (best, history) = train_on_split(model, &train_pairs, &val_pairs, t, cfg.loss, |e| {
        println!(
            "epoch {:>3}  lr {:.3e}  train {:.6e}  val {:.6e}",
            e.epoch, e.lr, e.train_loss, e.val_loss
        );
    })?;
    save_checkpoint(&best, out)?;
    let hist = history_path(out);
    fs::write(&hist, history_csv(&history)).with_context(|| format!("writing {}", hist.display()))?;
    println!(
        "best epoch {} -> {} (history {})",
        history.best_epoch,
        out.display(),
        hist.display()
    );
    Ok(())
}

pub fn predict(cfg: &RunConfig, checkpoint: &Path, flow_path: &Path, dets_path: &Path, out: &Path) -> Result<()> {
    let model = load_checkpoint(checkpoint).with_context(|| format!("reading {}", checkpoint.display()))?;
    let flow = load_flo(flow_path).with_context(|| format!("reading {}", flow_path.display()))?;
    let dets = load_detections(dets_path).with_context(|| format!("reading {}", dets_path.display()))?;
    let m = model.config();
    ensure!(
        (m.grid_w, m.grid_h) == flow.dims(),
        "checkpoint grid {}x{} does not match flow {}x{}",
        m.grid_w,
        m.grid_h,
        flow.width(),
        flow.height()
    );
    let tracks = if dets.is_empty() {
        Vec::new()
    } else {
        let fields = model.rollout(&flow, cfg.horizon)?;
        let mut next_id = dets.iter().filter_map(|d| d.ped_id).max().map_or(0, |m| m + 1);
        let mut tracks = Vec::with_capacity(dets.len());
        for d in &dets {
            let id = d.ped_id.unwrap_or_else(|| {
                next_id += 1;
                next_id - 1
            });
            tracks.extend(tracks_from_fields(&fields, d.frame_id, &[(id, d.bbox.centroid())]));
        }
        tracks
    };
    save_tracks(&tracks, out)?;
    println!(
        "{} tracks x {} steps -> {}",
        tracks.len(),
        cfg.horizon,
        out.display()
    );
    Ok(())
}

pub fn format_report(ev: &Evaluation) -> String {
    let mut s = String::from("ped\tADE / FDE\n");
    for p in &ev.per_ped {
        let _ = writeln!(s, "{}\t{:.2} / {:.2}", p.ped_id, p.ade, p.fde);
    }
    let _ = writeln!(s, "mean\t{:.2} / {:.2}", ev.mean_ade, ev.mean_fde);
    s
}

pub fn report_csv(ev: &Evaluation) -> String {
    let mut s = String::from("ped_id,ade,fde\n");
    for p in &ev.per_ped {
        let _ = writeln!(s, "{},{},{}", p.ped_id, p.ade, p.fde);
    }
    let _ = writeln!(s, "mean,{},{}", ev.mean_ade, ev.mean_fde);
    s
}

pub fn eval(pred: &Path, gt: &Path, out: Option<&Path>) -> Result<()> {
    let p = load_tracks(pred).with_context(|| format!("reading {}", pred.display()))?;
    let g = load_tracks(gt).with_context(|| format!("reading {}", gt.display()))?;
    let ev = evaluate(&p, &g)?;
    if let Some(o) = out {
        fs::write(o, report_csv(&ev)).with_context(|| format!("writing {}", o.display()))?;
    }
    print!("{}", format_report(&ev));
    Ok(())
}

/// Obstacle predictions from one operator step over a rasterised flow of the
/// pedestrians' last observed displacement.
///
/// Pedestrians outside the model grid keep their observed velocity.
fn model_predictions(model: &MnoModel, file: &ScenarioFile, t: f64) -> Result<Vec<ObstaclePrediction>> {
    let s = &file.scenario;
    let dt = s.config.dt;
    let m = model.config();
    let to_px = |p: Vec2| file.grid.to_pixel(p);
    let prev: Vec<(i64, Vec2)> = s.pedestrians.iter().map(|p| (p.ped_id, to_px(p.position_at(t - dt)))).collect();
    let now: Vec<(i64, Vec2)> = s.pedestrians.iter().map(|p| (p.ped_id, to_px(p.position_at(t)))).collect();
    let radius = s.pedestrians.iter().map(|p| p.radius).fold(0.0, f64::max) * file.grid.pixels_per_unit;
    let raster = SceneConfig {
        width: m.grid_w,
        height: m.grid_h,
        agent_radius: radius.max(0.5),
        ..SceneConfig::default()
    };
    let observed = ground_truth_flow(&prev, &now, &raster);
    let predicted = model.forward(&observed)?;
    let inside = |q: Vec2| q.x >= 0.0 && q.y >= 0.0 && q.x <= (m.grid_w - 1) as f64 && q.y <= (m.grid_h - 1) as f64;
    Ok(s.pedestrians
        .iter()
        .zip(&now)
        .map(|(p, &(_, q))| {
            let here = p.position_at(t);
            let step = if inside(q) {
                predicted.bilinear_sample(q) * (1.0 / file.grid.pixels_per_unit)
            } else {
                here - p.position_at(t - dt)
            };
            ObstaclePrediction {
                ped_id: p.ped_id,
                position_now: here,
                position_next: here + step,
                radius: p.radius,
                frame_dt: dt,
            }
        })
        .collect())
}

pub fn navigate(cfg: &RunConfig, scenario_path: &Path, checkpoint: Option<&Path>, out: &Path) -> Result<Trace> {
    let text = fs::read_to_string(scenario_path).with_context(|| format!("reading {}", scenario_path.display()))?;
    let file = parse_scenario(&text, &cfg.gvo).with_context(|| format!("in scenario {}", scenario_path.display()))?;
    let s = &file.scenario;
    let trace = match checkpoint {
        None => s.run_oracle()?,
        Some(path) => {
            let model = load_checkpoint(path).with_context(|| format!("reading {}", path.display()))?;
            let mut failure = None;
            let trace = simulate_navigation(
                s.robot,
                s.goal,
                |_, t| match model_predictions(&model, &file, t) {
                    Ok(p) => p,
                    Err(e) => {
                        failure.get_or_insert(e);
                        Vec::new()
                    }
                },
                &s.config,
                s.max_steps,
            )?;
            if let Some(e) = failure {
                bail!("operator prediction failed: {e:#}");
            }
            trace
        }
    };
    save_trace(&trace.steps, out)?;
    let clearance = s.actual_clearance(&trace);
    println!(
        "{} steps, goal {}, closest clearance {} -> {}",
        trace.steps.len(),
        if trace.reached_goal { "reached" } else { "not reached" },
        if clearance.is_finite() { format!("{clearance:.3}") } else { "inf".into() },
        out.display()
    );
    Ok(trace)
}

pub fn viz(
    flow_path: &Path,
    frame: Option<&Path>,
    dets: Option<&Path>,
    arrow_scale: f64,
    out: &Path,
) -> Result<()> {
    ensure!(arrow_scale > 0.0 && arrow_scale.is_finite(), "arrow scale must be positive");
    let flow = load_flo(flow_path).with_context(|| format!("reading {}", flow_path.display()))?;
    let frame = frame
        .map(|p| load_pgm(p).with_context(|| format!("reading {}", p.display())))
        .transpose()?;
    let dets = dets
        .map(|p| load_detections(p).with_context(|| format!("reading {}", p.display())))
        .transpose()?
        .unwrap_or_default();
    if let Some(f) = &frame {
        ensure!(
            f.dims() == flow.dims(),
            "frame {}x{} and flow {}x{} differ in size",
            f.width(),
            f.height(),
            flow.width(),
            flow.height()
        );
    }
    let rgb = viz::render(&flow, frame.as_ref(), &dets, arrow_scale);
    save_ppm(flow.width(), flow.height(), &rgb, out)?;
    println!("{} boxes -> {}", dets.len(), out.display());
    Ok(())
}
