//! The processing stages. Each reads and writes artifacts in the output
//! directory; the pipeline is exactly the stages run in order.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, ensure, Context, Result};
use echosplit::beamform::{das_frame, inject_reflectors, localize_line, place_reflectors, rep_beamform, LocalizedReflector, OperatorCache};
use echosplit::decomposition::{decompose_frame, Method, PropagationDiagnostic, ReflectorPulse};
use echosplit::metrics::{log_compress, mse_psnr, scan_convert, ssim, BModeImage, CompressionReport, PolarImage};
use echosplit::phantom::{make_cyst_phantom, make_point_phantom, simulate_rx, ArrayGeometry, Phantom, RawFrame, Scatterer};
use echosplit::signal::{analytic_envelope, SampledSignal};
use echosplit::sparse::{encode_frame, ksvd_train, KsvdConfig, OmpConfig, TrainingSet};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::config::{substream, tag, PhantomKind, RunConfig};
use crate::formats::{
    frame_hash, quantize_frame, read_codes, read_dictionary, read_frame, write_atomic, write_codes, write_dictionary,
    write_frame, CodeFile, DictionaryFile,
};
use crate::images::{read_pgm, write_pgm, write_png};

/// Every decomposition variant an output directory can hold.
pub const ALL_TAGS: [(Method, bool); 4] = [
    (Method::Stft, false),
    (Method::Stft, true),
    (Method::Iq, false),
    (Method::Iq, true),
];

/// Configuration plus artifact locations for one run.
#[derive(Debug, Clone)]
pub struct Ctx {
    pub cfg: RunConfig,
    pub out: PathBuf,
    pub frame: PathBuf,
    pub dictionary: PathBuf,
}

impl Ctx {
    pub fn new(cfg: RunConfig, out: impl Into<PathBuf>) -> Self {
        let out = out.into();
        Self {
            frame: out.join("frame.usrf"),
            dictionary: out.join("dictionary.usdk"),
            cfg,
            out,
        }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// Ground-truth files live next to the frame they describe.
    fn truth(&self, name: &str) -> PathBuf {
        self.frame.parent().unwrap_or(Path::new(".")).join(name)
    }

    fn tagged(&self, stem: &str, ext: &str) -> PathBuf {
        self.path(&format!("{stem}_{}.{ext}", self.cfg.tag()))
    }

    fn width(&self) -> f64 {
        self.cfg.geometry.element_width_m
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn require(path: &Path, hint: &str) -> Result<()> {
    ensure!(path.exists(), "missing input {} ({hint})", path.display());
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthSidecar {
    pub phantom: PhantomKind,
    pub phantom_seed: u64,
    pub n_speckle: usize,
    pub reflectors: Vec<Scatterer>,
    pub background_frame: String,
    pub strong_frame: String,
}

pub fn simulate(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    let geometry = cfg.array()?;
    let pulse = cfg.pulse_model()?;
    let angles = cfg.line_angles();
    let phantom_seed = substream(cfg.seed, "phantom");
    let phantom: Phantom = match cfg.phantom.kind {
        PhantomKind::Point => make_point_phantom(&echosplit::phantom::PointPhantomConfig {
            seed: phantom_seed,
            ..cfg.phantom.point.clone()
        })?,
        PhantomKind::Cyst => make_cyst_phantom(&echosplit::phantom::CystPhantomConfig {
            seed: phantom_seed,
            ..cfg.phantom.cyst.clone()
        })?,
    };
    let speckle = phantom.speckle_only();
    let strong = phantom.reflectors_only();
    let n = cfg.scan.n_samples;
    let mut background = simulate_rx(&speckle, &geometry, &angles, &pulse, n)?;
    let mut reflectors = simulate_rx(&strong, &geometry, &angles, &pulse, n)?;
    if let Some([a, b]) = cfg.scan.receive_elements {
        background = background.select_elements(a..b)?;
        reflectors = reflectors.select_elements(a..b)?;
    }
    let mut frame = background.clone();
    for (v, s) in frame.channels.iter_mut().zip(&reflectors.channels) {
        *v += s;
    }
    fs::create_dir_all(&ctx.out)?;
    write_frame(&ctx.frame, &frame)?;
    write_frame(&ctx.truth("truth_background.usrf"), &background)?;
    write_frame(&ctx.truth("truth_strong.usrf"), &reflectors)?;
    write_json(
        &ctx.truth("truth.json"),
        &TruthSidecar {
            phantom: cfg.phantom.kind,
            phantom_seed,
            n_speckle: speckle.len(),
            reflectors: strong.scatterers,
            background_frame: "truth_background.usrf".into(),
            strong_frame: "truth_strong.usrf".into(),
        },
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub source: String,
    pub lines: Vec<usize>,
    pub n_examples: usize,
    pub errors: Vec<f64>,
    pub replaced_atoms: Vec<usize>,
}

/// Learn the patch dictionary from beamformed lines of the decomposed
/// background.
pub fn train(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    let d = &cfg.dictionary;
    let source = ctx.tagged("background", "usrf");
    require(&source, "run decompose first")?;
    let frame = read_frame(&source, ctx.width())?;
    let weights = cfg.beamform.apodization.weights(frame.n_elements());
    let lines = das_frame(&frame, &weights)?;

    let mut order: Vec<usize> = (0..lines.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(substream(cfg.seed, "training-lines")));
    let mut chosen = Vec::new();
    let mut examples = 0;
    for l in order {
        if chosen.len() >= d.train_lines && examples >= d.n_atoms {
            break;
        }
        examples += TrainingSet::from_lines([lines[l].samples.as_slice()], d.patch_len)?.n_examples();
        chosen.push(l);
    }
    ensure!(
        examples >= d.n_atoms,
        "the frame yields only {examples} non-silent patches of {} samples; training {} atoms needs at least as many",
        d.patch_len,
        d.n_atoms
    );
    chosen.sort_unstable();
    let set = TrainingSet::from_lines(chosen.iter().map(|&l| lines[l].samples.as_slice()), d.patch_len)?;
    let report = ksvd_train(
        &set,
        &KsvdConfig {
            n_atoms: d.n_atoms,
            sparsity: d.train_sparsity,
            tol: d.train_tol,
            n_iters: d.n_iters,
            seed: substream(cfg.seed, "dictionary"),
        },
    )?;
    write_dictionary(
        &ctx.dictionary,
        &DictionaryFile {
            dictionary: report.dictionary,
            train_tol: d.train_tol.unwrap_or(0.0),
            config_hash: cfg.dictionary_hash(),
        },
    )?;
    write_json(
        &ctx.path("dictionary_training.json"),
        &TrainingReport {
            source: source.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default(),
            lines: chosen,
            n_examples: set.n_examples(),
            errors: report.errors,
            replaced_atoms: report.replaced_atoms,
        },
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflectorsFile {
    pub method: Method,
    pub modified: bool,
    pub frame_hash: u64,
    pub background_hash: u64,
    /// RMS sample value of the decomposed frame; coding tolerances scale with it.
    pub reference_rms: f64,
    pub n_reflectors: usize,
    /// `pulses[line][element]`.
    pub pulses: Vec<Vec<Vec<ReflectorPulse>>>,
    pub diagnostics: Vec<PropagationDiagnostic>,
}

/// Split every channel into strong-reflector and background components.
pub fn decompose(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    require(&ctx.frame, "run simulate first or pass --frame")?;
    let frame = read_frame(&ctx.frame, ctx.width())?;
    let pulse = cfg.pulse_model()?;
    let dec = decompose_frame(&frame, &pulse, &cfg.decomposition)?;

    let mut background = RawFrame::zeros(frame.geometry.clone(), frame.line_angles.clone(), frame.n_samples);
    let mut strong = background.clone();
    let mut pulses = Vec::with_capacity(frame.n_lines());
    for l in 0..frame.n_lines() {
        let mut per_element = Vec::with_capacity(frame.n_elements());
        for m in 0..frame.n_elements() {
            let r = dec.get(l, m);
            background.channel_mut(l, m).copy_from_slice(&r.background.to_rf()?.samples);
            strong.channel_mut(l, m).copy_from_slice(&r.strong.to_rf()?.samples);
            per_element.push(r.reflectors.clone());
        }
        pulses.push(per_element);
    }
    let n = frame.channels.len().max(1) as f64;
    let reference_rms = (frame.channels.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
    write_frame(&ctx.tagged("background", "usrf"), &background)?;
    write_frame(&ctx.tagged("strong", "usrf"), &strong)?;
    write_json(
        &ctx.tagged("reflectors", "json"),
        &ReflectorsFile {
            method: cfg.decomposition.method,
            modified: cfg.decomposition.modified,
            frame_hash: frame_hash(&frame),
            background_hash: frame_hash(&quantize_frame(&background)),
            reference_rms,
            n_reflectors: dec.total_reflectors(),
            pulses,
            diagnostics: dec.diagnostics,
        },
    )
}

fn load_dictionary(ctx: &Ctx) -> Result<DictionaryFile> {
    require(&ctx.dictionary, "run train first or pass --dictionary")?;
    let d = read_dictionary(&ctx.dictionary)?;
    let want = &ctx.cfg.dictionary;
    ensure!(
        d.dictionary.patch_len() == want.patch_len && d.dictionary.n_atoms() == want.n_atoms,
        "dictionary {} is {}x{}, config asks for {}x{}",
        ctx.dictionary.display(),
        d.dictionary.patch_len(),
        d.dictionary.n_atoms(),
        want.patch_len,
        want.n_atoms
    );
    ensure!(
        d.config_hash == ctx.cfg.dictionary_hash(),
        "dictionary {} was trained with different dictionary settings or seed than this config",
        ctx.dictionary.display()
    );
    Ok(d)
}

/// Sparse-code the background channels over the dictionary.
pub fn encode(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    let refl_path = ctx.tagged("reflectors", "json");
    require(&refl_path, "run decompose first")?;
    let refl: ReflectorsFile = read_json(&refl_path)?;
    let background = read_frame(&ctx.tagged("background", "usrf"), ctx.width())?;
    ensure!(
        frame_hash(&background) == refl.background_hash,
        "background frame does not match {}; re-run decompose",
        refl_path.display()
    );
    let d = load_dictionary(ctx)?;
    let q = d.dictionary.patch_len();
    let omp = OmpConfig::new(
        cfg.dictionary.encode_tol_rel * refl.reference_rms * (q as f64).sqrt(),
        cfg.dictionary.max_nnz,
    );
    let code = encode_frame(&background, &d.dictionary, &omp)?;
    write_codes(
        &ctx.tagged("codes", "ussc"),
        &CodeFile {
            code,
            dictionary_hash: d.dictionary.fingerprint(),
            source_hash: refl.background_hash,
        },
    )
}

fn lines_frame(template: &RawFrame, lines: &[SampledSignal]) -> Result<RawFrame> {
    let g = &template.geometry;
    let geometry = ArrayGeometry::new(vec![0.0], g.element_width_m, g.c_mps, g.fs_hz, g.f0_hz)?;
    Ok(RawFrame {
        geometry,
        line_angles: template.line_angles.clone(),
        n_samples: template.n_samples,
        channels: lines.iter().flat_map(|l| l.samples.iter().copied()).collect(),
    })
}

/// Beamform the background from its codes, place the localized reflectors,
/// and add the two.
pub fn beamform(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    let codes_path = ctx.tagged("codes", "ussc");
    require(&codes_path, "run encode first")?;
    let codes = read_codes(&codes_path)?;
    let d = load_dictionary(ctx)?;
    ensure!(
        codes.dictionary_hash == d.dictionary.fingerprint(),
        "{} was coded with a different dictionary than {}",
        codes_path.display(),
        ctx.dictionary.display()
    );
    let refl: ReflectorsFile = read_json(&ctx.tagged("reflectors", "json"))?;
    ensure!(
        codes.source_hash == refl.background_hash,
        "{} is stale with respect to the latest decomposition; re-run encode",
        codes_path.display()
    );
    let template = read_frame(&ctx.tagged("background", "usrf"), ctx.width())?;
    let geometry = &template.geometry;
    let weights = cfg.beamform.apodization.weights(geometry.n_elements());
    let mean_weight = weights.iter().sum::<f64>() / weights.len() as f64;
    let pulse = cfg.pulse_model()?;
    let dict = Arc::new(d.dictionary);
    let cache = OperatorCache::new();

    let per_line: Vec<(SampledSignal, Vec<LocalizedReflector>)> = template
        .line_angles
        .par_iter()
        .enumerate()
        .map(|(l, &theta)| {
            let op = cache.get_or_build(geometry, theta, &dict, &weights, template.n_samples)?;
            let background = rep_beamform(&op, &codes.code, l)?;
            let located = localize_line(
                &refl.pulses[l],
                geometry,
                theta,
                refl.method,
                &pulse,
                cfg.beamform.group_tolerance_m,
            )?;
            Ok((background, located))
        })
        .collect::<Result<_>>()?;
    let (background, located): (Vec<SampledSignal>, Vec<Vec<LocalizedReflector>>) = per_line.into_iter().unzip();
    let mut placed = place_reflectors(&located, &template.line_angles, cfg.beamform.merge_tolerance_m)?;
    placed.iter_mut().flatten().for_each(|r| r.amplitude *= mean_weight);

    let zero = SampledSignal {
        samples: vec![0.0; template.n_samples],
        fs_hz: geometry.fs_hz,
        t0_s: 0.0,
    };
    let strong: Vec<SampledSignal> = placed
        .iter()
        .map(|rs| inject_reflectors(&zero, rs, &pulse, geometry.c_mps))
        .collect();
    let combined: Vec<SampledSignal> = background
        .iter()
        .zip(&strong)
        .map(|(b, s)| SampledSignal {
            samples: b.samples.iter().zip(&s.samples).map(|(x, y)| x + y).collect(),
            ..b.clone()
        })
        .collect();
    write_frame(&ctx.tagged("beam_background", "usrf"), &lines_frame(&template, &background)?)?;
    write_frame(&ctx.tagged("beam_strong", "usrf"), &lines_frame(&template, &strong)?)?;
    write_frame(&ctx.tagged("beam_combined", "usrf"), &lines_frame(&template, &combined)?)?;
    write_json(&ctx.tagged("localized", "json"), &placed)
}

/// Envelope, log compression and scan conversion of beamformed lines.
pub fn render_lines(lines: &RawFrame, cfg: &RunConfig) -> Result<BModeImage> {
    ensure!(lines.n_elements() == 1, "expected beamformed lines");
    let env: Vec<Vec<f64>> = (0..lines.n_lines())
        .into_par_iter()
        .map(|l| analytic_envelope(lines.channel(l, 0)))
        .collect();
    let g = &lines.geometry;
    let mut polar = PolarImage::from_lines(env, lines.line_angles.clone(), g.fs_hz, g.c_mps, 0.0)?;
    polar.values = log_compress(&polar.values, cfg.imaging.dynamic_range_db)?;
    Ok(scan_convert(&polar, cfg.imaging.width_px, cfg.imaging.height_px)?)
}

fn save_image(ctx: &Ctx, name: &str, img: &BModeImage) -> Result<()> {
    write_pgm(&ctx.path(&format!("{name}.pgm")), img)?;
    write_png(&ctx.path(&format!("{name}.png")), img)
}

/// Image every available set of lines: the ground truth and raw frame
/// (beamformed here by delay-and-sum) and each decomposition variant.
pub fn render(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    let mut rendered = 0;
    for (name, path) in [
        ("raw", ctx.frame.clone()),
        ("truth_background", ctx.truth("truth_background.usrf")),
        ("truth_strong", ctx.truth("truth_strong.usrf")),
    ] {
        if !path.exists() {
            continue;
        }
        let frame = read_frame(&path, ctx.width())?;
        let weights = cfg.beamform.apodization.weights(frame.n_elements());
        let lines = lines_frame(&frame, &das_frame(&frame, &weights)?)?;
        save_image(ctx, name, &render_lines(&lines, cfg)?)?;
        rendered += 1;
    }
    for (method, modified) in ALL_TAGS {
        let t = tag(method, modified);
        for kind in ["background", "strong", "combined"] {
            let path = ctx.path(&format!("beam_{kind}_{t}.usrf"));
            if !path.exists() {
                continue;
            }
            let lines = read_frame(&path, ctx.width())?;
            save_image(ctx, &format!("{kind}_{t}"), &render_lines(&lines, cfg)?)?;
            rendered += 1;
        }
    }
    if rendered == 0 {
        bail!("nothing to render in {}", ctx.out.display());
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    pub tag: String,
    pub component: String,
    pub reference: String,
    pub mse: f64,
    pub psnr_db: f64,
    pub ssim: f64,
    pub n_samples: Option<u64>,
    pub n_background_coeffs: Option<u64>,
    pub n_reflector_params: Option<u64>,
    pub percent_coeffs: Option<f64>,
    pub compression_factor: Option<f64>,
}

fn compare(a: &BModeImage, b: &BModeImage) -> Result<(f64, f64, f64)> {
    let (mse, psnr) = mse_psnr(a, b)?;
    Ok((mse, psnr, ssim(a, b)?))
}

fn write_csv(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    write_atomic(path, &w.into_inner()?)
}

/// Image quality against the ground truth and compression accounting for
/// every decomposition variant present, written to `metrics.csv`.
pub fn evaluate(ctx: &Ctx) -> Result<Vec<MetricRow>> {
    let load = |name: &str| -> Result<Option<BModeImage>> {
        let p = ctx.path(&format!("{name}.pgm"));
        if p.exists() {
            read_pgm(&p).map(Some)
        } else {
            Ok(None)
        }
    };
    let raw = load("raw")?;
    let truth_bg = load("truth_background")?;
    let truth_strong = load("truth_strong")?;
    let mut rows = Vec::new();
    let mut push = |tag: &str, component: &str, reference: &str, a: &BModeImage, b: &BModeImage, c: Option<CompressionReport>| -> Result<()> {
        let (mse, psnr_db, s) = compare(a, b)?;
        rows.push(MetricRow {
            tag: tag.into(),
            component: component.into(),
            reference: reference.into(),
            mse,
            psnr_db,
            ssim: s,
            n_samples: c.map(|c| c.n_samples_total),
            n_background_coeffs: c.map(|c| c.n_background_coeffs),
            n_reflector_params: c.map(|c| c.n_reflector_params),
            percent_coeffs: c.map(|c| c.percent_coeffs),
            compression_factor: c.map(|c| c.compression_factor),
        });
        Ok(())
    };
    if let (Some(r), Some(t)) = (&raw, &truth_bg) {
        push("raw", "raw", "truth_background", r, t, None)?;
    }
    for (method, modified) in ALL_TAGS {
        let t = tag(method, modified);
        let codes_path = ctx.path(&format!("codes_{t}.ussc"));
        let refl_path = ctx.path(&format!("reflectors_{t}.json"));
        let report = if codes_path.exists() && refl_path.exists() {
            let codes = read_codes(&codes_path)?;
            let refl: ReflectorsFile = read_json(&refl_path)?;
            let c = &codes.code;
            let r = echosplit::metrics::compression_report(
                (c.n_lines * c.n_elements * c.n_samples) as u64,
                c.total_nnz() as u64,
                refl.n_reflectors as u64,
            );
            write_json(&ctx.path(&format!("compression_{t}.json")), &r)?;
            Some(r)
        } else {
            None
        };
        if let (Some(img), Some(truth)) = (load(&format!("background_{t}"))?, &truth_bg) {
            push(&t, "background", "truth_background", &img, truth, report)?;
        }
        if let (Some(img), Some(truth)) = (load(&format!("strong_{t}"))?, &truth_strong) {
            push(&t, "strong", "truth_strong", &img, truth, report)?;
        }
        if let (Some(img), Some(r)) = (load(&format!("combined_{t}"))?, &raw) {
            push(&t, "combined", "raw", &img, r, report)?;
        }
    }
    write_csv(&ctx.path("metrics.csv"), &rows)?;
    Ok(rows)
}

/// Compare two image files directly.
pub fn evaluate_pair(ctx: &Ctx, reference: &Path, image: &Path) -> Result<MetricRow> {
    let a = read_pgm(reference)?;
    let b = read_pgm(image)?;
    let (mse, psnr_db, s) = compare(&b, &a)?;
    let row = MetricRow {
        tag: "pair".into(),
        component: image.display().to_string(),
        reference: reference.display().to_string(),
        mse,
        psnr_db,
        ssim: s,
        n_samples: None,
        n_background_coeffs: None,
        n_reflector_params: None,
        percent_coeffs: None,
        compression_factor: None,
    };
    fs::create_dir_all(&ctx.out)?;
    write_csv(&ctx.path("metrics_pair.csv"), std::slice::from_ref(&row))?;
    Ok(row)
}

/// All stages in order. Trains a dictionary only when none is present.
pub fn pipeline(ctx: &Ctx) -> Result<Vec<MetricRow>> {
    require(&ctx.frame, "run simulate first or pass --frame")?;
    fs::create_dir_all(&ctx.out)?;
    decompose(ctx)?;
    if !ctx.dictionary.exists() {
        train(ctx)?;
    }
    encode(ctx)?;
    beamform(ctx)?;
    render(ctx)?;
    evaluate(ctx)
}
