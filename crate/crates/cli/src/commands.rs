use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use qsips_core::analysis::{
    enhancement_ratio, enhancement_stderr, fourier_interpolate, gaussian_blur, line_cut, GaussianFit,
};
use qsips_core::estimator::{cumulants_from_raw, g_maps, CumulantMode, MomentAccumulator};
use qsips_core::field::FieldMap;
use qsips_core::frame_sim::{sample_stack, RngSpec};
use qsips_core::io::{
    read_frame_stack, read_qmap, write_cumulant_csv, write_cumulant_stack, write_fit_table, write_frame_stack,
    write_pgm16, write_qmap, write_visibility_sweep, FitRow,
};
use qsips_core::pipeline::{fit_peak, visibility_sweep, MapSource};
use qsips_core::reconstruction::{qsips_map, sofi_map, sr_map_via_g, Method};
use qsips_core::sim_fusion::{estimate_pattern_vector, fuse as fuse_set, AcquisitionSet};
use qsips_core::verify::{self, Mutations};
use qsips_core::Execution;

use crate::config::{MethodName, ScenarioConfig};
use crate::error::CliError;
use crate::manifest::{self, Manifest, MapEntry, MapIndex, StackEntry, MANIFEST, MAP_INDEX};

pub struct Context {
    pub config: ScenarioConfig,
    pub out: PathBuf,
    pub exec: Execution,
    pub force_g_maps: bool,
}

impl Context {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn prepare_out(&self, command: &str) -> Result<(), CliError> {
        std::fs::create_dir_all(&self.out).map_err(|e| CliError::data(format!("{}: {e}", self.out.display())))?;
        let file = self.path(&format!("{command}.config.toml"));
        std::fs::write(&file, self.config.canonical()).map_err(|e| CliError::data(format!("{}: {e}", file.display())))
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>, CliError> {
        let p = self.path(name);
        File::create(&p)
            .map(BufWriter::new)
            .map_err(|e| CliError::data(format!("{}: {e}", p.display())))
    }
}

pub fn simulate(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let scene = cfg.scene()?;
    let patterns = cfg.patterns(&scene.psf);
    let acq = &cfg.acquisition;
    ctx.prepare_out("simulate")?;
    let n_phases = acq.phases.len();
    let mut stacks = Vec::with_capacity(patterns.len());
    for (s, pattern) in patterns.iter().enumerate() {
        let stream = s as u64;
        let stack = sample_stack(
            &scene,
            pattern,
            acq.n_frames,
            RngSpec::new(acq.seed, stream),
            cfg.allocation(),
            ctx.exec,
        )?;
        let file = if pattern.uniform {
            "stack_uniform.qstk".to_string()
        } else {
            format!("stack_t{}_p{}.qstk", s / n_phases, s % n_phases)
        };
        write_frame_stack(&ctx.path(&file), &stack)?;
        eprintln!("simulate: {file} ({} frames, stream {stream})", acq.n_frames);
        stacks.push(StackEntry {
            file,
            stream,
            uniform: pattern.uniform,
            theta: pattern.theta,
            phi: pattern.phi,
            p_mag: pattern.p_mag,
        });
    }
    manifest::write(
        &ctx.path(MANIFEST),
        &Manifest {
            seed: acq.seed,
            n_frames: acq.n_frames,
            allocation: format!("{:?}", cfg.allocation()),
            width: scene.width,
            height: scene.height,
            psf_sigma: scene.psf.sigma,
            stacks,
        },
    )
}

fn brightest(map: &FieldMap) -> (f64, f64) {
    let (i, _) = map
        .data
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best });
    ((i % map.width) as f64 * map.pitch, (i / map.width) as f64 * map.pitch)
}

fn sigma_stderr(fit: &GaussianFit) -> f64 {
    let se = fit.stderr();
    0.5 * fit.sigma() * ((se[3] / fit.sigma_x).powi(2) + (se[4] / fit.sigma_y).powi(2)).sqrt()
}

fn fit_row(label: &str, order: usize, fit: &GaussianFit, reference: &GaussianFit) -> FitRow {
    FitRow {
        label: label.to_string(),
        order,
        sigma: fit.sigma(),
        stderr: sigma_stderr(fit),
        enhancement: enhancement_ratio(reference, fit),
        enhancement_stderr: enhancement_stderr(reference, fit),
    }
}

/// Fits `maps` against the reference; a failed fit is reported and skipped.
fn fit_rows(
    reference: &FieldMap,
    maps: &[(String, usize, FieldMap)],
    window: Option<(f64, f64, f64)>,
) -> Vec<FitRow> {
    let (cx, cy, half) = window.unwrap_or_else(|| {
        let (x, y) = brightest(reference);
        (x, y, 5.0)
    });
    let reference = match fit_peak(reference, cx, cy, half) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("warning: reference fit failed: {e}");
            return Vec::new();
        }
    };
    let mut rows = vec![fit_row("intensity", 1, &reference, &reference)];
    for (label, order, map) in maps {
        match fit_peak(map, cx, cy, half) {
            Ok(f) => rows.push(fit_row(label, *order, &f, &reference)),
            Err(e) => eprintln!("warning: fit of {label} order {order} failed: {e}"),
        }
    }
    rows
}

fn fit_window(cfg: &ScenarioConfig) -> Option<(f64, f64, f64)> {
    cfg.outputs.fit.map(|f| (f.x, f.y, f.half))
}

fn write_pgm(ctx: &Context, name: &str, map: &FieldMap) -> Result<(), CliError> {
    if ctx.config.outputs.pgm {
        write_pgm16(&ctx.path(name), map)?;
    }
    Ok(())
}

struct Input {
    path: PathBuf,
    stem: String,
    entry: StackEntry,
}

fn stem_of(path: &Path) -> String {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    name.strip_suffix(".qstk").unwrap_or(&name).to_string()
}

pub fn reconstruct(ctx: &Context, stacks: &[PathBuf]) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let (inputs, psf_sigma) = if stacks.is_empty() {
        let m: Manifest = manifest::read(&ctx.path(MANIFEST))?;
        let inputs = m
            .stacks
            .into_iter()
            .map(|e| Input {
                path: ctx.path(&e.file),
                stem: stem_of(Path::new(&e.file)),
                entry: e,
            })
            .collect::<Vec<_>>();
        (inputs, m.psf_sigma)
    } else {
        let sigma = cfg.scene.as_ref().map_or(0.0, |s| s.psf_sigma);
        let inputs = stacks
            .iter()
            .enumerate()
            .map(|(i, p)| Input {
                path: p.clone(),
                stem: stem_of(p),
                entry: StackEntry {
                    file: p.display().to_string(),
                    stream: i as u64,
                    uniform: true,
                    theta: 0.0,
                    phi: 0.0,
                    p_mag: 0.0,
                },
            })
            .collect();
        (inputs, sigma)
    };
    ctx.prepare_out("reconstruct")?;
    let rc = &cfg.reconstruction;
    let mode = if rc.unbiased { CumulantMode::Unbiased } else { CumulantMode::PlugIn };
    let need_g = rc.methods.contains(&MethodName::SrG);
    let mut entries = Vec::with_capacity(inputs.len());
    for input in inputs {
        let stack = read_frame_stack(&input.path)?;
        let mut acc = MomentAccumulator::new(stack.width, stack.height, rc.j_max, need_g)?;
        acc.accumulate_frames(&stack.values)?;
        let k = cumulants_from_raw(&acc, rc.j_max, mode)?;
        let stem = &input.stem;
        let cumulants = format!("{stem}.cumulants.qstk");
        write_cumulant_stack(&ctx.path(&cumulants), &k)?;
        if cfg.outputs.csv {
            write_cumulant_csv(ctx.create(&format!("{stem}.cumulants.csv"))?, &k)?;
        }
        let mut files = BTreeMap::new();
        let mut fit_inputs = Vec::new();
        for &name in &rc.methods {
            let method = name.method();
            let planes: Vec<FieldMap> = match method {
                Method::Qsips => (1..=rc.j_max).map(|j| Ok(qsips_map(&k, j)?.map)).collect::<Result<_, CliError>>()?,
                Method::Sofi => (1..=rc.j_max).map(|j| Ok(sofi_map(&k, j)?.map)).collect::<Result<_, CliError>>()?,
                Method::SrG => {
                    let top = rc.j_max.min(5);
                    let g = g_maps(&acc, top)?;
                    let mut planes = vec![k.map(1)?];
                    for j in 2..=top {
                        planes.push(sr_map_via_g(&g, j, ctx.force_g_maps)?.map);
                    }
                    planes
                }
            };
            let file = format!("{stem}.{}.qmap", method.name());
            write_qmap(&ctx.path(&file), &planes)?;
            for (i, plane) in planes.iter().enumerate().skip(1) {
                write_pgm(ctx, &format!("{stem}.{}{}.pgm", method.name(), i + 1), plane)?;
                fit_inputs.push((method.name().to_string(), i + 1, plane.clone()));
            }
            files.insert(method.name().to_string(), file);
        }
        let mean = k.map(1)?;
        write_pgm(ctx, &format!("{stem}.intensity.pgm"), &mean)?;
        if cfg.outputs.csv {
            let rows = fit_rows(&mean, &fit_inputs, fit_window(cfg));
            write_fit_table(ctx.create(&format!("{stem}.metrics.csv"))?, &rows)?;
        }
        eprintln!("reconstruct: {stem} ({} frames, orders 1..={})", stack.n_frames, rc.j_max);
        let e = input.entry;
        entries.push(MapEntry {
            stem: stem.clone(),
            uniform: e.uniform,
            theta: e.theta,
            phi: e.phi,
            p_mag: e.p_mag,
            cumulants,
            maps: files,
        });
    }
    manifest::write(
        &ctx.path(MAP_INDEX),
        &MapIndex {
            j_max: rc.j_max,
            psf_sigma,
            entries,
        },
    )
}

fn mean_map(maps: &[FieldMap]) -> FieldMap {
    let mut out = maps[0].clone();
    for m in &maps[1..] {
        out.data.iter_mut().zip(&m.data).for_each(|(a, b)| *a += b);
    }
    let n = maps.len() as f64;
    out.data.iter_mut().for_each(|v| *v /= n);
    out
}

fn push_unique(v: &mut Vec<f64>, x: f64) {
    if !v.contains(&x) {
        v.push(x);
    }
}

pub fn fuse(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let index: MapIndex = manifest::read(&ctx.path(MAP_INDEX))?;
    let sim: Vec<&MapEntry> = index.entries.iter().filter(|e| !e.uniform).collect();
    if sim.is_empty() {
        return Err(CliError::data("map index holds no structured-illumination maps"));
    }
    if !(index.psf_sigma > 0.0) {
        return Err(CliError::config("PSF sigma unknown; simulate first or give a [scene] block"));
    }
    let order = cfg.fusion.order;
    if order > index.j_max {
        return Err(CliError::config(format!("fusion.order {order} exceeds reconstructed j_max {}", index.j_max)));
    }
    let (mut thetas, mut phases) = (Vec::new(), Vec::new());
    for e in &sim {
        push_unique(&mut thetas, e.theta);
        push_unique(&mut phases, e.phi);
    }
    let lookup = |t: f64, f: f64| sim.iter().find(|e| e.theta == t && e.phi == f).copied();
    let methods: Vec<String> = sim[0].maps.keys().cloned().collect();
    ctx.prepare_out("fuse")?;
    let params = cfg.fusion_params(index.psf_sigma);

    let mut load_cache: BTreeMap<String, Vec<FieldMap>> = BTreeMap::new();
    let mut planes = |file: &str| -> Result<Vec<FieldMap>, CliError> {
        if let Some(p) = load_cache.get(file) {
            return Ok(p.clone());
        }
        let p = read_qmap(&ctx.path(file))?;
        load_cache.insert(file.to_string(), p.clone());
        Ok(p)
    };

    let intensity_maps = sim
        .iter()
        .map(|e| Ok(planes(&e.maps[&methods[0]])?[0].clone()))
        .collect::<Result<Vec<_>, CliError>>()?;
    let intensity = mean_map(&intensity_maps);
    write_pgm(ctx, "intensity_mean.pgm", &intensity)?;

    let p_mag = if cfg.fusion.estimate_pattern {
        let mut sum = 0.0;
        for &t in &thetas {
            let e = lookup(t, phases[0]).ok_or_else(|| CliError::data("first phase missing"))?;
            let est = estimate_pattern_vector(&planes(&e.maps[&methods[0]])?[0], t)?;
            if est.near_nyquist {
                eprintln!("warning: carrier estimate for theta {t} sits at the Nyquist edge");
            }
            sum += est.p_mag;
        }
        sum / thetas.len() as f64
    } else {
        sim[0].p_mag
    };

    let mut fit_inputs = Vec::new();
    for method in &methods {
        let mut entries = Vec::with_capacity(thetas.len() * phases.len());
        for &t in &thetas {
            for &f in &phases {
                entries.push(match lookup(t, f) {
                    Some(e) => Some(
                        planes(&e.maps[method])?
                            .get(order - 1)
                            .cloned()
                            .ok_or_else(|| CliError::data(format!("{} lacks order {order}", e.maps[method])))?,
                    ),
                    None => None,
                });
            }
        }
        let set = AcquisitionSet::from_grid(thetas.clone(), phases.clone(), p_mag, order, entries)?;
        let fused = fuse_set(&set, &params, ctx.exec)?;
        let name = format!("fused_{method}{order}");
        write_qmap(&ctx.path(&format!("{name}.qmap")), std::slice::from_ref(&fused.map))?;
        write_pgm(ctx, &format!("{name}.pgm"), &fused.map)?;
        eprintln!(
            "fuse: {name} (support {:.4} cycles/px, worst band condition {:.3e})",
            fused.support,
            fused.condition_numbers.iter().cloned().fold(0.0, f64::max)
        );
        fit_inputs.push((method.clone(), order, mean_map(&set.maps)));
        fit_inputs.push((format!("{method}-sim"), order, fused.map));
    }
    let rows = fit_rows(&intensity, &fit_inputs, fit_window(cfg));
    for r in &rows {
        println!(
            "{:<12} order {} sigma {:.4} +- {:.4} enhancement {:.3} +- {:.3}",
            r.label, r.order, r.sigma, r.stderr, r.enhancement, r.enhancement_stderr
        );
    }
    Ok(write_fit_table(ctx.create("enhancement.csv")?, &rows)?)
}

pub fn analyze(ctx: &Context, maps: &[PathBuf]) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let visibility = cfg.analysis.visibility.as_ref();
    if visibility.is_none() && maps.is_empty() {
        return Err(CliError::config("nothing to analyze: give QMAP files or an [analysis.visibility] block"));
    }
    ctx.prepare_out("analyze")?;
    if let Some(v) = visibility {
        let scene = cfg.scene()?;
        let source = if v.exact {
            MapSource::Exact
        } else {
            MapSource::MonteCarlo {
                n_frames: cfg.acquisition.n_frames,
                seed: cfg.acquisition.seed,
                allocation: cfg.allocation(),
            }
        };
        let rows = visibility_sweep(&scene, v.b, &v.m_values, source, ctx.exec)?;
        for r in &rows {
            println!("M {:>6} fano {:.4} V_sofi {:+.4} V_qsips {:+.4}", r.m, r.fano_detected, r.v_sofi, r.v_qsips);
        }
        write_visibility_sweep(ctx.create("visibility.csv")?, &rows)?;
    }
    if maps.is_empty() {
        return Ok(());
    }
    let o = &cfg.outputs;
    let mut processed = Vec::new();
    for path in maps {
        let stem = {
            let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            name.strip_suffix(".qmap").unwrap_or(&name).to_string()
        };
        for (i, plane) in read_qmap(path)?.into_iter().enumerate() {
            let mut m = plane;
            if o.interpolation > 1 {
                m = fourier_interpolate(&m, o.interpolation)?;
            }
            if o.blur_sigma > 0.0 {
                m = gaussian_blur(&m, o.blur_sigma)?;
            }
            let name = format!("{stem}.plane{}", i + 1);
            write_qmap(&ctx.path(&format!("{name}.analyzed.qmap")), std::slice::from_ref(&m))?;
            write_pgm(ctx, &format!("{name}.analyzed.pgm"), &m)?;
            if let Some(c) = &cfg.analysis.line_cut {
                let values = line_cut(&m, (c.from[0], c.from[1]), (c.to[0], c.to[1]), c.samples);
                let mut w = csv::Writer::from_writer(ctx.create(&format!("{name}.linecut.csv"))?);
                w.write_record(["t", "value"]).map_err(|e| CliError::data(e.to_string()))?;
                let last = (values.len() - 1) as f64;
                for (s, v) in values.iter().enumerate() {
                    w.write_record([format!("{}", s as f64 / last), format!("{v}")])
                        .map_err(|e| CliError::data(e.to_string()))?;
                }
                w.flush().map_err(|e| CliError::data(e.to_string()))?;
            }
            processed.push((name, i + 1, m));
        }
    }
    let (_, _, reference) = processed.remove(0);
    let rows = fit_rows(&reference, &processed, fit_window(cfg));
    Ok(write_fit_table(ctx.create("fits.csv")?, &rows)?)
}

/// Runs the identity checks, prints the JSON report and fails on any miss.
pub fn verify(out: Option<&Path>, mutations: Mutations) -> Result<(), CliError> {
    let report = verify::run(mutations)?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    println!("{json}");
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| CliError::data(format!("{}: {e}", dir.display())))?;
        let p = dir.join("verify.json");
        std::fs::write(&p, &json).map_err(|e| CliError::data(format!("{}: {e}", p.display())))?;
    }
    if report.passed {
        Ok(())
    } else {
        let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        Err(CliError::Verification(failed.join(", ")))
    }
}
