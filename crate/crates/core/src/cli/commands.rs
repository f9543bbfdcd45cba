use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{ProviderKind, RunConfig};
use crate::appearance::{refine_sh, Refined};
use crate::correspond::{
    positional_encoding, CorrespondenceFile, CorrespondenceProvider, ExactProvider, FileProvider, RenderMatchProvider,
};
use crate::error::{Error, Result};
use crate::grid::{ColorImage, Mask};
use crate::io::{load_cameras, save_color_png, write_csv, write_json, write_pfm};
use crate::register::{coarse_align, iterative_align, AlignResult, IterationReport};
use crate::render::{gradient_vote_segment, render};
use crate::register::Affine;
use crate::splat::{apply_similarity, load_ply, save_ply, Camera, SimilarityTransform, SplatCloud};
use crate::synth::{chamfer, emd, miou, object_masks, BundleManifest, SceneBundle};
use crate::viewsel::{select_views, ViewSelection};

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<BundleManifest> {
    cfg.validate()?;
    let bundle = SceneBundle::generate(&cfg.synth, &cfg.degrade, cfg.seed)?;
    ensure_dir(out)?;
    bundle.save(out)
}

/// Builds the correspondence source configured in `cfg` for object `k`.
pub fn make_provider(bundle: &SceneBundle, k: usize, cfg: &RunConfig) -> Result<Box<dyn CorrespondenceProvider>> {
    bundle.check_object(k)?;
    let proxy = &bundle.scene.proxies[k];
    let kept = &bundle.kept[k];
    Ok(match cfg.provider.kind {
        ProviderKind::Exact => Box::new(ExactProvider::from_kept(kept, &bundle.partial_clouds[k])?),
        ProviderKind::ExactNoiseless => {
            let gt = bundle.scene.gt_transforms[k];
            let means = proxy.means();
            Box::new(ExactProvider::new(kept.iter().map(|&i| (i, gt.apply_point(&means[i]))).collect()))
        }
        ProviderKind::Render => {
            let gen: Vec<Vec<f64>> = proxy.means().iter().map(|p| positional_encoding(p, cfg.provider.octaves)).collect();
            let par = kept.iter().map(|&i| gen[i].clone()).collect();
            Box::new(RenderMatchProvider::new(gen, par, cfg.provider.top_k))
        }
        ProviderKind::File => {
            let path = cfg.provider.path.as_ref().ok_or_else(|| Error::Validation("provider.path unset".into()))?;
            Box::new(FileProvider::load(path)?)
        }
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoarseSummary {
    pub transform: SimilarityTransform,
    pub fitness: f64,
    pub rmse: f64,
    pub icp_iterations: usize,
    pub start_index: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransformReport {
    pub object: usize,
    pub coarse: Option<CoarseSummary>,
    /// Product of the iterative updates.
    pub iterative: Affine,
    /// Proxy frame to partial frame.
    pub total: Affine,
    pub final_residual: f64,
}

#[derive(Debug, Clone)]
pub struct AlignOutput {
    pub cloud: SplatCloud,
    pub reports: Vec<IterationReport>,
    pub transform: TransformReport,
}

/// Coarse then iterative alignment of proxy `k` onto its partial cloud, using training views.
pub fn align_object(bundle: &SceneBundle, k: usize, cfg: &RunConfig) -> Result<AlignOutput> {
    cfg.validate()?;
    bundle.check_object(k)?;
    let proxy = &bundle.scene.proxies[k];
    let partial = &bundle.partial_clouds[k];
    if partial.is_empty() {
        return Err(Error::RegistrationFailed {
            stage: "coarse".into(),
            reason: "partial cloud is empty".into(),
        });
    }
    let (start, coarse) = if cfg.alignment.skip_coarse {
        (proxy.clone(), None)
    } else {
        let c = coarse_align(proxy, partial, &cfg.icp, cfg.seed).map_err(|e| Error::registration("coarse", e))?;
        log::info!("coarse: fitness {:.3}, rmse {:.4e}", c.icp.fitness, c.icp.rmse);
        (
            apply_similarity(proxy, &c.transform)?,
            Some(CoarseSummary {
                transform: c.transform,
                fitness: c.icp.fitness,
                rmse: c.icp.rmse,
                icp_iterations: c.icp.iterations,
                start_index: c.start_index,
            }),
        )
    };
    let provider = make_provider(bundle, k, cfg)?;
    let cams = bundle.cams(&bundle.train);
    let masks = bundle.masks(k, &bundle.train);
    let AlignResult {
        cloud,
        reports,
        composed,
        ..
    } = iterative_align(&start, partial, &cams, &masks, provider.as_ref(), &cfg.align_config())
        .map_err(|e| Error::registration("iterative", e))?;
    let first = coarse
        .as_ref()
        .map(|c| Affine::from(&c.transform.to_anisotropic()))
        .unwrap_or_else(Affine::identity);
    let final_residual = reports.iter().rev().find(|r| !r.skipped).map_or(f64::NAN, |r| r.residual);
    Ok(AlignOutput {
        cloud,
        reports,
        transform: TransformReport {
            object: k,
            coarse,
            iterative: composed,
            total: composed.after(&first),
            final_residual,
        },
    })
}

fn write_jsonl<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    let mut text = String::new();
    for r in rows {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `aligned.ply`, `report.jsonl` and `transform.json` into `out`.
pub fn cmd_align(bundle_dir: &Path, k: usize, cfg: &RunConfig, out: &Path) -> Result<AlignOutput> {
    let bundle = SceneBundle::load(bundle_dir)?;
    let res = align_object(&bundle, k, cfg)?;
    ensure_dir(out)?;
    save_ply(&res.cloud, out.join("aligned.ply"))?;
    write_jsonl(&res.reports, &out.join("report.jsonl"))?;
    write_json(&res.transform, out.join("transform.json"))?;
    Ok(res)
}

/// Isolated renders of the true object, zeroed outside its scene mask.
pub fn refine_targets(bundle: &SceneBundle, k: usize, views: &[usize]) -> Result<(Vec<Camera>, Vec<ColorImage>, Vec<Mask>)> {
    bundle.check_object(k)?;
    let cams = bundle.cams(views);
    let masks = bundle.masks(k, views);
    let targets = cams
        .iter()
        .zip(&masks)
        .map(|(cam, m)| {
            let img = render(&bundle.scene.full_clouds[k], cam).color;
            let mut out = img.clone();
            for (px, &inside) in out.data_mut().iter_mut().zip(m.data()) {
                if !inside {
                    *px = [0.0; 3];
                }
            }
            out
        })
        .collect();
    Ok((cams, targets, masks))
}

pub fn refine_object(cloud: &SplatCloud, bundle: &SceneBundle, k: usize, cfg: &RunConfig) -> Result<Refined> {
    cfg.validate()?;
    let (cams, targets, masks) = refine_targets(bundle, k, &bundle.train)?;
    refine_sh(cloud, &cams, &targets, &masks, &cfg.appearance)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RefineSummary {
    pub object: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub initial_l1: f64,
    pub final_l1: f64,
    pub best_iteration: usize,
}

/// Writes `refined.ply`, `loss.csv` and `refine.json` into `out`.
pub fn cmd_refine(cloud_path: &Path, bundle_dir: &Path, k: usize, cfg: &RunConfig, out: &Path) -> Result<RefineSummary> {
    let bundle = SceneBundle::load(bundle_dir)?;
    let cloud = load_ply(cloud_path)?;
    let refined = refine_object(&cloud, &bundle, k, cfg)?;
    let first = refined.trace[0];
    let best = refined.trace[refined.best_iteration];
    let summary = RefineSummary {
        object: k,
        initial_loss: first.total,
        final_loss: best.total,
        initial_l1: first.l1,
        final_l1: best.l1,
        best_iteration: refined.best_iteration,
    };
    ensure_dir(out)?;
    save_ply(&refined.cloud, out.join("refined.ply"))?;
    write_csv("iteration,l1,dssim,total", &refined.trace_rows(), out.join("loss.csv"))?;
    write_json(&summary, out.join("refine.json"))?;
    Ok(summary)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub chamfer: f64,
    pub emd: f64,
    pub miou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub object: usize,
    pub test_views: Vec<usize>,
    pub evaluated: Metrics,
    /// The degraded partial object scored the same way.
    pub partial_baseline: Metrics,
    pub chamfer_ratio: f64,
}

/// Test-view masks of object `k` with `cloud` standing in for it in the scene.
pub fn substituted_masks(bundle: &SceneBundle, k: usize, cloud: &SplatCloud, views: &[usize]) -> Result<Vec<Mask>> {
    let mut scene = bundle.scene.plane.clone();
    let mut ranges = Vec::new();
    for (j, full) in bundle.scene.full_clouds.iter().enumerate() {
        let obj = if j == k { cloud } else { full };
        ranges.push(scene.len()..scene.len() + obj.len());
        scene = scene.concat(obj)?;
    }
    Ok(object_masks(&scene, &ranges, &bundle.cams(views)).swap_remove(k))
}

pub fn metrics(bundle: &SceneBundle, k: usize, cloud: &SplatCloud, seed: u64) -> Result<Metrics> {
    bundle.check_object(k)?;
    if bundle.test.is_empty() {
        return Err(Error::NotFound("bundle has no test views".into()));
    }
    let full = bundle.scene.full_clouds[k].means();
    let pts = cloud.means();
    let pred = substituted_masks(bundle, k, cloud, &bundle.test)?;
    Ok(Metrics {
        chamfer: chamfer(&pts, &full)?,
        emd: emd(&pts, &full, seed)?,
        miou: miou(&pred, &bundle.masks(k, &bundle.test))?,
    })
}

pub fn evaluate(bundle: &SceneBundle, k: usize, cloud: &SplatCloud, seed: u64) -> Result<EvalReport> {
    let evaluated = metrics(bundle, k, cloud, seed)?;
    let partial_baseline = metrics(bundle, k, &bundle.partial_clouds[k], seed)?;
    Ok(EvalReport {
        object: k,
        test_views: bundle.test.clone(),
        evaluated,
        partial_baseline,
        chamfer_ratio: evaluated.chamfer / partial_baseline.chamfer,
    })
}

/// Writes `metrics.json` and, if configured, `renders/view{v}.png` for each test view.
pub fn cmd_eval(cloud_path: &Path, bundle_dir: &Path, k: usize, cfg: &RunConfig, out: &Path) -> Result<EvalReport> {
    cfg.validate()?;
    let bundle = SceneBundle::load(bundle_dir)?;
    let cloud = load_ply(cloud_path)?;
    let report = evaluate(&bundle, k, &cloud, cfg.seed)?;
    ensure_dir(out)?;
    write_json(&report, out.join("metrics.json"))?;
    if cfg.eval.save_renders {
        let dir = out.join("renders");
        ensure_dir(&dir)?;
        for &v in &bundle.test {
            save_color_png(&render(&cloud, &bundle.scene.cams[v]).color, dir.join(format!("view{v:03}.png")))?;
        }
    }
    Ok(report)
}

pub fn cmd_select_views(bundle_dir: &Path, k: usize, cfg: &RunConfig, out: &Path) -> Result<ViewSelection> {
    cfg.validate()?;
    let bundle = SceneBundle::load(bundle_dir)?;
    bundle.check_object(k)?;
    let mut sel = select_views(&bundle.masks(k, &bundle.train), &bundle.cams(&bundle.train), &cfg.view_select)?;
    // report bundle view indices rather than positions in the training list
    let global = |i: usize| bundle.train[i];
    sel.selected.iter_mut().for_each(|v| *v = global(*v));
    sel.candidates.iter_mut().for_each(|v| *v = global(*v));
    sel.scores.iter_mut().for_each(|s| s.view = global(s.view));
    ensure_dir(out)?;
    write_json(&sel, out.join("views.json"))?;
    Ok(sel)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentReport {
    pub object: usize,
    /// Indices into the degraded scene (plane, then every partial object).
    pub selected: Vec<usize>,
    pub precision: f64,
    pub recall: f64,
}

/// Segments object `k` out of the degraded scene by blend-weight voting over training views.
pub fn cmd_segment_vote(bundle_dir: &Path, k: usize, cfg: &RunConfig, out: &Path) -> Result<SegmentReport> {
    cfg.validate()?;
    let bundle = SceneBundle::load(bundle_dir)?;
    bundle.check_object(k)?;
    let mut scene = bundle.scene.plane.clone();
    let mut range = 0..0;
    for (j, p) in bundle.partial_clouds.iter().enumerate() {
        if j == k {
            range = scene.len()..scene.len() + p.len();
        }
        scene = scene.concat(p)?;
    }
    let selected = gradient_vote_segment(&scene, &bundle.cams(&bundle.train), &bundle.masks(k, &bundle.train))?;
    let hits = selected.iter().filter(|i| range.contains(i)).count() as f64;
    let report = SegmentReport {
        object: k,
        precision: if selected.is_empty() { 0.0 } else { hits / selected.len() as f64 },
        recall: if range.is_empty() { 0.0 } else { hits / range.len() as f64 },
        selected,
    };
    ensure_dir(out)?;
    save_ply(&scene.subset(&report.selected)?, out.join("segment.ply"))?;
    write_json(&report, out.join("segment.json"))?;
    Ok(report)
}

/// Rendered-descriptor matches between `gen` (or the proxy) and the partial object in every training view.
pub fn cmd_match(bundle_dir: &Path, k: usize, gen_path: Option<&Path>, cfg: &RunConfig, out: &Path) -> Result<CorrespondenceFile> {
    cfg.validate()?;
    let bundle = SceneBundle::load(bundle_dir)?;
    bundle.check_object(k)?;
    let gen = match gen_path {
        Some(p) => load_ply(p)?,
        None => bundle.scene.proxies[k].clone(),
    };
    let proxy = &bundle.scene.proxies[k];
    if gen.len() != proxy.len() {
        return Err(Error::DimensionMismatch(format!(
            "matching cloud has {} primitives, proxy has {}",
            gen.len(),
            proxy.len()
        )));
    }
    let desc: Vec<Vec<f64>> = proxy.means().iter().map(|p| positional_encoding(p, cfg.provider.octaves)).collect();
    let par_desc = bundle.kept[k].iter().map(|&i| desc[i].clone()).collect();
    let provider = RenderMatchProvider::new(desc, par_desc, cfg.provider.top_k);
    let (mut pairs, mut conf) = (Vec::new(), Vec::new());
    for &v in &bundle.train {
        let (p, c) = provider.match_view(&gen, &bundle.partial_clouds[k], &bundle.scene.cams[v], &bundle.scene.masks[k][v])?;
        pairs.extend(p);
        conf.extend(c);
    }
    let file = CorrespondenceFile::from_pairs(&pairs, &conf, None);
    ensure_dir(out)?;
    file.save(out.join("correspondences.json"))?;
    Ok(file)
}

/// Color PNG and depth PFM of `cloud` under each camera.
pub fn cmd_render(cloud_path: &Path, cameras_path: &Path, out: &Path) -> Result<usize> {
    let cloud = load_ply(cloud_path)?;
    let cams = load_cameras(cameras_path)?;
    ensure_dir(out)?;
    for (i, cam) in cams.iter().enumerate() {
        let r = render(&cloud, cam);
        save_color_png(&r.color, out.join(format!("view{i:03}.png")))?;
        write_pfm(&r.depth, out.join(format!("view{i:03}.pfm")))?;
    }
    Ok(cams.len())
}
