use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use isonrsfm_core::io::{self, CorrespondenceFile, RunReport, SweepRow};
use isonrsfm_core::pipeline::Baseline;
use isonrsfm_core::warp::Smoother;
use isonrsfm_core::{
    assemble_cubics, evaluate as score, generate_cylinder, run_pipeline, BaseSolver, CorrespondenceSet, CubicPair, CylinderParams,
    ErrorModel, GroundTruth, NormalizedPoint, PairDifferentials, PipelineConfig, SyntheticScene,
};
use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

use crate::{
    BaselineArg, ConfigOverrides, DumpArgs, EvaluateArgs, PairArgs, ReconstructArgs, SmootherArg, SolverArg, SynthArgs, SynthOverrides,
};

pub const SYNTH_FILE: &str = "synth.json";

impl From<SolverArg> for BaseSolver {
    fn from(s: SolverArg) -> Self {
        match s {
            SolverArg::Substitution => BaseSolver::Substitution,
            SolverArg::Resultant => BaseSolver::Resultant,
        }
    }
}

fn synth_params(o: &SynthOverrides) -> Result<CylinderParams> {
    let mut p: CylinderParams = match &o.params {
        Some(path) => io::read_json(path)?,
        None => CylinderParams::default(),
    };
    if let Some(v) = o.images {
        p.images = v;
    }
    if let Some(v) = o.points {
        p.points = v;
    }
    if let Some(v) = o.noise_px {
        p.noise_px = v;
    }
    if let Some(v) = o.error_fraction {
        p.error_fraction = v;
    }
    if let Some(std_px) = o.error_std_px {
        p.error_model = ErrorModel::UniformStd { std_px };
    }
    if let (Some(min_px), Some(max_px)) = (o.error_min_px, o.error_max_px) {
        p.error_model = ErrorModel::MagnitudeRange { min_px, max_px };
    }
    if o.flat {
        p.radius_range = None;
    }
    Ok(p)
}

fn pipeline_config(o: &ConfigOverrides) -> Result<PipelineConfig> {
    let mut c: PipelineConfig = match &o.config {
        Some(path) => io::read_json(path)?,
        None => PipelineConfig::default(),
    };
    macro_rules! set {
        ($($field:ident),*) => {
            $(if let Some(v) = o.$field {
                c.$field = v;
            })*
        };
    }
    set!(
        subset_size,
        short_subset_size,
        short_references,
        lambda,
        mad_lambda,
        consensus_refit,
        mad_delta_fraction,
        mad_majority,
        flag_factor,
        epsilon_deg,
        min_images,
        neighbors,
        isometry_threshold,
        inlier_fraction,
        hallucinate_grid,
        grid_size,
        seed
    );
    if let Some(s) = o.solver {
        c.solver = s.into();
    }
    if let Some(b) = o.baseline {
        c.baseline = match b {
            BaselineArg::Wide => Baseline::Wide,
            BaselineArg::Short => Baseline::Short,
        };
    }
    if let Some(s) = o.smoother {
        c.smoother = match s {
            SmootherArg::Bending => Smoother::Bending,
            SmootherArg::Schwarzian => Smoother::Schwarzian,
        };
    }
    c.validate()?;
    Ok(c)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

#[derive(Serialize, Deserialize)]
struct SynthRecord {
    seed: u64,
    params: CylinderParams,
}

pub fn write_dataset(dir: &Path, scene: &SyntheticScene, cs: &CorrespondenceSet) -> Result<()> {
    create_dir(dir)?;
    let file = CorrespondenceFile { intrinsics: io::INTRINSICS_FILE.into(), set: cs.clone() };
    io::write_text(&dir.join(io::CORRESPONDENCES_FILE), &io::format_correspondences(&file))?;
    io::write_json(&dir.join(io::INTRINSICS_FILE), &scene.params.intrinsics)?;
    io::write_text(&dir.join(io::GROUND_TRUTH_FILE), &io::format_ground_truth(&GroundTruth::from_scene(scene)))?;
    io::write_text(&dir.join(io::LABELS_FILE), &io::format_labels(&scene.corrupted, cs))?;
    io::write_json(&dir.join(SYNTH_FILE), &SynthRecord { seed: scene.seed, params: scene.params.clone() })?;
    Ok(())
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let params = synth_params(&a.synth)?;
    let (scene, cs) = generate_cylinder(&params, a.seed)?;
    write_dataset(&a.out, &scene, &cs)?;
    println!(
        "wrote {} images, {} tracks, {} corrupted observations to {}",
        cs.n_images(),
        cs.n_tracks(),
        scene.corrupted_count(),
        a.out.display()
    );
    Ok(())
}

fn resolve(dir: &Path, name: &str) -> PathBuf {
    let p = Path::new(name);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        dir.join(p)
    }
}

fn has_ground_truth(dir: &Path) -> bool {
    dir.join(io::GROUND_TRUTH_FILE).is_file() && dir.join(io::LABELS_FILE).is_file()
}

pub fn reconstruct(a: &ReconstructArgs) -> Result<()> {
    let config = pipeline_config(&a.config)?;
    let file = io::read_correspondences(&a.dataset.join(io::CORRESPONDENCES_FILE))?;
    let k = io::read_intrinsics(&resolve(&a.dataset, &file.intrinsics))?;
    let cs = &file.set;
    let out = run_pipeline(cs, &k, &config)?;
    let metrics = if has_ground_truth(&a.dataset) {
        let gt = io::read_ground_truth(&a.dataset, cs.n_images(), cs.n_tracks())?;
        Some(score(&out.estimates, &out.labels, &gt))
    } else {
        None
    };
    create_dir(&a.out)?;
    for (i, est) in out.estimates.iter().enumerate() {
        io::write_text(&a.out.join(io::cloud_file_name(i)), &io::format_ply(i, &io::cloud_points(est)))?;
    }
    let report = RunReport::new(&out, metrics);
    io::write_json(&a.out.join(io::REPORT_FILE), &report)?;
    io::write_json(&a.out.join(io::TIMINGS_FILE), &out.timings)?;
    print!("reconstructed {} points, {} recorded failures", report.reconstructed_points, report.failures.len());
    match &report.metrics {
        Some(m) => println!("; depth {:.3} mm, shape {:.3} deg, TPR {:.3}, TNR {:.3}", m.depth_rmse_mm, m.shape_rmse_deg, m.rates.tpr, m.rates.tnr),
        None => println!(),
    }
    Ok(())
}

pub fn evaluate(a: &EvaluateArgs) -> Result<()> {
    if let Some(csv) = &a.sweep {
        return sweep(a, csv);
    }
    let (Some(rec), Some(gt_dir)) = (&a.reconstruction, &a.ground_truth) else {
        bail!("--reconstruction and --ground-truth are required without --sweep");
    };
    let report = io::read_report(&rec.join(io::REPORT_FILE))?;
    let clouds = (0..report.n_images).map(|i| io::read_ply(&rec.join(io::cloud_file_name(i)))).collect::<Result<Vec<_>, _>>()?;
    if let Some((i, (found, _))) = clouds.iter().enumerate().find(|(i, (img, _))| img != i) {
        bail!("{} holds image {} instead of {}", io::cloud_file_name(i), found + 1, i + 1);
    }
    let estimates = io::estimates_from_clouds(&clouds, report.n_images, report.n_tracks)?;
    let gt = io::read_ground_truth(gt_dir, report.n_images, report.n_tracks)?;
    let eval = score(&estimates, &report.labels, &gt);
    let text = io::format_json(&eval)?;
    match &a.out {
        Some(p) => io::write_text(p, &text)?,
        None => print!("{text}"),
    }
    Ok(())
}

/// Sweep rows, one per contamination fraction, each averaged over `seeds` generated scenes.
pub fn sweep_rows(params: &CylinderParams, config: &PipelineConfig, fractions: &[f64], seeds: u64) -> Result<Vec<SweepRow>> {
    fractions
        .iter()
        .map(|&f| {
            let reports = (0..seeds)
                .map(|seed| {
                    let p = CylinderParams { error_fraction: f, ..params.clone() };
                    let (scene, cs) = generate_cylinder(&p, seed)?;
                    let out = run_pipeline(&cs, &p.intrinsics, config)?;
                    Ok(score(&out.estimates, &out.labels, &GroundTruth::from_scene(&scene)))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(SweepRow::mean(f, &reports))
        })
        .collect()
}

fn sweep(a: &EvaluateArgs, csv: &Path) -> Result<()> {
    if a.seeds == 0 {
        bail!("--seeds must be at least 1");
    }
    if let Some(f) = a.fractions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
        bail!("contamination fraction {f} outside [0, 1]");
    }
    let params = synth_params(&a.synth)?;
    let config = pipeline_config(&a.config)?;
    let rows = sweep_rows(&params, &config, &a.fractions, a.seeds)?;
    io::write_text(csv, &io::format_sweep(&rows))?;
    for r in &rows {
        println!(
            "fraction {:.2}: depth {:.3} mm, shape {:.3} deg, TPR {:.3}, TNR {:.3}",
            r.fraction, r.depth_rmse_mm, r.shape_rmse_deg, r.tpr, r.tnr
        );
    }
    Ok(())
}

/// One image pair at one correspondence, in normalized coordinates.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairInput {
    /// Point in the reference image.
    pub reference: NormalizedPoint,
    /// The same point in the other image, where the warp derivatives are taken.
    pub other: NormalizedPoint,
    /// Rows of the warp Jacobian, other image to reference.
    pub jacobian: [[f64; 2]; 2],
    pub h3: f64,
    pub h4: f64,
}

fn cubics_from(input: &Path) -> Result<CubicPair> {
    let p: PairInput = io::read_json(input)?;
    let j = Matrix2::new(p.jacobian[0][0], p.jacobian[0][1], p.jacobian[1][0], p.jacobian[1][1]);
    Ok(assemble_cubics(p.reference, &PairDifferentials::new(j, p.h3, p.h4, p.other, p.reference))?)
}

pub fn dump_cubics(a: &DumpArgs) -> Result<()> {
    print!("{}", io::format_json(&cubics_from(&a.input)?)?);
    Ok(())
}

pub fn solve_pair(a: &PairArgs) -> Result<()> {
    let pair: CubicPair = if a.cubics { io::read_json(&a.input)? } else { cubics_from(&a.input)? };
    let solver: BaseSolver = a.solver.into();
    let set = solver.solve(&pair)?;
    print!("{}", io::format_json(&set)?);
    Ok(())
}
