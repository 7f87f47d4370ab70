use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use super::*;
use crate::annotations::{self, NoduleAnnotation, NoduleLabel, ScanIdentity};
use crate::cam::{self, ChannelStack, HeatMap};
use crate::imaging::{self, GrayImage};
use crate::interpret::{self, InterpretabilityReport, ScoreItem, ScoreRow};
use crate::manifest::{self, DatasetManifest, SplitAssignment, SplitSidecar};
use crate::toylab::{self, ToyMode, ToySetup};

pub(super) fn dispatch(command: &Command) -> Result<i32, CliError> {
    match command {
        Command::Parse(a) => parse(a),
        Command::Split(a) => split(a),
        Command::Audit(a) => audit(a),
        Command::Mccv(a) => mccv(a),
        Command::Cam(a) => cam_cmd(a),
        Command::Score(a) => score(a),
        Command::Overlay(a) => overlay(a),
        Command::Toy(a) => toy(a),
    }
}

fn input_err(path: &Path) -> impl Fn(&dyn fmt::Display) -> CliError + '_ {
    move |e| CliError::new("input", e).at(path)
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::new("output", e).at(dir))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::new("output", e).at(path))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    let mut out = create(path)?;
    out.write_all(text.as_bytes())
        .and_then(|()| out.flush())
        .map_err(|e| CliError::new("output", e).at(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::new("output", e))?;
    text.push('\n');
    write_text(path, &text)
}

/// Records the resolved parameters of a run next to its main output.
fn write_config<T: Serialize>(out: &Path, command: &str, args: &T) -> Result<(), CliError> {
    let value = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "args": args,
    });
    write_json(&sibling(out, "config.json"), &value)
}

fn load_manifest(path: &Path) -> Result<DatasetManifest, CliError> {
    DatasetManifest::load(path).map_err(|e| input_err(path)(&e))
}

fn write_manifest(path: &Path, manifest: &DatasetManifest) -> Result<(), CliError> {
    let mut out = create(path)?;
    manifest
        .write_jsonl(&mut out)
        .map_err(|e| CliError::new("output", e).at(path))?;
    out.flush().map_err(|e| CliError::new("output", e).at(path))
}

fn parse(args: &ParseArgs) -> Result<i32, CliError> {
    let dir_err = input_err(&args.xml_dir);
    let mut files: Vec<PathBuf> = fs::read_dir(&args.xml_dir)
        .map_err(|e| dir_err(&e))?
        .map(|entry| entry.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(|e| dir_err(&e))?;
    files.retain(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("xml")));
    files.sort();

    let mut all = Vec::new();
    for file in &files {
        let err = input_err(file);
        let bytes = fs::read(file).map_err(|e| err(&e))?;
        let doc = annotations::parse_lidc_document(&bytes).map_err(|e| err(&e))?;
        let stem = file.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        let scan_id = doc.series_uid.clone().unwrap_or_else(|| stem.clone());
        let scan = ScanIdentity::new(scan_id, stem);
        all.extend(annotations::group_reads_into_nodules(&scan, &doc.sessions, args.tolerance).map_err(|e| err(&e))?);
    }
    let grouped = all.len();
    let kept = annotations::filter_min_readers(all, args.min_readers).map_err(|e| CliError::new("usage", e))?;
    let after_readers = kept.len();
    let excluded = kept.iter().filter(|a| a.label == NoduleLabel::Excluded).count();
    let labeled: Vec<NoduleAnnotation> = kept.into_iter().filter(|a| a.label != NoduleLabel::Excluded).collect();

    let slice_map: BTreeMap<String, Vec<f64>> = match &args.slice_map {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| input_err(path)(&e))?;
            serde_json::from_str(&text).map_err(|e| input_err(path)(&e))?
        }
        None => annotated_slices(&labeled),
    };
    let manifest = manifest::build_manifest(&labeled, args.image_root.as_deref(), &slice_map)
        .map_err(|e| CliError::new("input", e))?;

    write_manifest(&args.out, &manifest)?;
    write_config(&args.out, "parse", args)?;
    let summary = json!({
        "files": files.len(),
        "nodules": grouped,
        "nodules_min_readers": after_readers,
        "excluded": excluded,
        "annotations": labeled.len(),
        "patients": manifest.patients().len(),
        "records": manifest.len(),
        "class_counts": manifest.class_counts,
    });
    println!("{summary}");
    Ok(EXIT_OK)
}

/// Every scan's slices are the distinct z positions its contours touch.
fn annotated_slices(annotations: &[NoduleAnnotation]) -> BTreeMap<String, Vec<f64>> {
    let mut map: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for a in annotations {
        map.entry(a.scan_id.clone()).or_default().extend(&a.z_positions);
    }
    for zs in map.values_mut() {
        zs.sort_by(f64::total_cmp);
        zs.dedup();
    }
    map
}

fn split(args: &SplitArgs) -> Result<i32, CliError> {
    let plan = match (&args.fractions, &args.counts) {
        (Some(f), None) => parse_fractions(f)?,
        (None, Some(c)) => parse_counts(c)?,
        _ => return Err(CliError::new("usage", "give exactly one of --fractions and --counts")),
    };
    let manifest = load_manifest(&args.manifest)?;
    let assignment = match args.mode {
        SplitModeArg::Fair => manifest::fair_split(&manifest, &plan, args.seed),
        SplitModeArg::Unfair => manifest::unfair_split(&manifest, &plan, args.seed),
    }
    .map_err(|e| CliError::new("input", e))?;

    let mut out = create(&args.out)?;
    manifest::write_assignment_csv(&mut out, &assignment).map_err(|e| CliError::new("output", e).at(&args.out))?;
    out.flush().map_err(|e| CliError::new("output", e).at(&args.out))?;
    write_json(&sibling(&args.out, "sidecar.json"), &assignment.sidecar())?;
    write_config(&args.out, "split", args)?;

    let sizes = assignment.fold_sizes();
    let per_class: BTreeMap<String, [usize; 3]> = manifest::ClassLabel::ALL
        .iter()
        .map(|&l| (format!("{l:?}").to_lowercase(), assignment.class_fold_sizes(&manifest, l)))
        .collect();
    println!("{}", json!({ "train": sizes[0], "validation": sizes[1], "test": sizes[2], "per_class": per_class }));
    Ok(EXIT_OK)
}

fn load_assignment(path: &Path, sidecar_path: &Path) -> Result<SplitAssignment, CliError> {
    let text = fs::read_to_string(sidecar_path).map_err(|e| input_err(sidecar_path)(&e))?;
    let sidecar: SplitSidecar = serde_json::from_str(&text).map_err(|e| input_err(sidecar_path)(&e))?;
    let file = File::open(path).map_err(|e| input_err(path)(&e))?;
    manifest::read_assignment_csv(file, &sidecar).map_err(|e| input_err(path)(&e))
}

fn audit(args: &AuditArgs) -> Result<i32, CliError> {
    let manifest = load_manifest(&args.manifest)?;
    let sidecar = args.sidecar.clone().unwrap_or_else(|| sibling(&args.assignment, "sidecar.json"));
    let assignment = load_assignment(&args.assignment, &sidecar)?;
    let report = manifest::leakage_audit(&manifest, &assignment).map_err(|e| CliError::new("input", e))?;
    match &args.out {
        Some(out) => {
            write_json(out, &report)?;
            write_config(out, "audit", args)?;
            println!(
                "{}",
                json!({ "is_clean": report.is_clean, "leaked_patients": report.leaked_patient_count() })
            );
        }
        None => println!("{}", serde_json::to_string_pretty(&report).map_err(|e| CliError::new("output", e))?),
    }
    Ok(if report.is_clean { EXIT_OK } else { EXIT_LEAK })
}

fn test_patient_list(spec: &str) -> Result<BTreeSet<String>, CliError> {
    let text = match spec.strip_prefix('@') {
        Some(file) => {
            let path = Path::new(file);
            fs::read_to_string(path).map_err(|e| input_err(path)(&e))?
        }
        None => spec.replace(',', "\n"),
    };
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

fn mccv(args: &MccvArgs) -> Result<i32, CliError> {
    let manifest = load_manifest(&args.manifest)?;
    let test = test_patient_list(&args.test_patients)?;
    let schedule = manifest::mccv_schedule(&manifest.patients(), &test, args.fraction, args.epochs, args.seed)
        .map_err(|e| CliError::new("input", e))?;
    write_json(&args.out, &schedule)?;
    write_config(&args.out, "mccv", args)?;
    println!(
        "{}",
        json!({
            "epochs": schedule.epochs.len(),
            "test_patients": schedule.test_patients.len(),
            "distinct_validation_sets": schedule.distinct_validation_sets(),
        })
    );
    Ok(EXIT_OK)
}

fn load_stack(path: &Path) -> Result<ChannelStack, CliError> {
    let tensor = cam::load_tensor(path).map_err(|e| input_err(path)(&e))?;
    ChannelStack::from_tensor(&tensor).map_err(|e| input_err(path)(&e))
}

fn is_png(path: &Path) -> bool {
    path.extension().is_some_and(|x| x.eq_ignore_ascii_case("png"))
}

fn save_heatmap(path: &Path, heat: &HeatMap) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::new("output", e).at(dir))?;
    }
    let saved = if is_png(path) {
        imaging::save_image(heat.as_gray(), path).map_err(|e| e.to_string())
    } else {
        cam::save_tensor(path, &heat.to_tensor()).map_err(|e| e.to_string())
    };
    saved.map_err(|e| CliError::new("output", e).at(path))
}

fn load_heatmap(path: &Path) -> Result<HeatMap, String> {
    if is_png(path) {
        imaging::load_image(path).map(HeatMap::from_gray).map_err(|e| e.to_string())
    } else {
        cam::load_tensor(path)
            .and_then(|t| HeatMap::from_tensor(&t))
            .map_err(|e| e.to_string())
    }
}

fn cam_cmd(args: &CamArgs) -> Result<i32, CliError> {
    let features = load_stack(&args.features)?;
    let grads = load_stack(&args.grads)?;
    let width = args.width.unwrap_or(features.width());
    let height = args.height.unwrap_or(features.height());
    let heat = cam::grad_cam(&features, &grads, args.variant, width, height).map_err(|e| CliError::new("input", e))?;
    save_heatmap(&args.out, &heat)?;
    write_config(&args.out, "cam", args)?;
    println!("{}", json!({ "width": heat.width(), "height": heat.height(), "variant": args.variant.as_str() }));
    Ok(EXIT_OK)
}

/// First existing `<dir>/<record_id>.<ext>`.
fn find_by_record(dir: &Path, record_id: &str, extensions: &[&str]) -> Option<PathBuf> {
    extensions
        .iter()
        .map(|ext| dir.join(format!("{record_id}.{ext}")))
        .find(|p| p.is_file())
}

fn score(args: &ScoreArgs) -> Result<i32, CliError> {
    let manifest = load_manifest(&args.manifest)?;
    let mut items = Vec::new();
    let mut failed = Vec::new();
    for record in &manifest.records {
        let id = &record.record_id;
        let fail = |reason: String| ScoreRow {
            record_id: id.clone(),
            model_tag: args.model_tag.clone(),
            outcome: Err(reason),
        };
        let Some(heat_path) = find_by_record(&args.heatmaps, id, &["png", "ftnsr"]) else {
            failed.push(fail("heat map not found".into()));
            continue;
        };
        let mask_path = record
            .mask_path
            .as_ref()
            .map(|m| args.masks.join(m))
            .filter(|p| p.is_file())
            .or_else(|| find_by_record(&args.masks, id, &["png"]));
        let Some(mask_path) = mask_path else {
            failed.push(fail("mask not found".into()));
            continue;
        };
        let loaded = load_heatmap(&heat_path)
            .and_then(|heat| imaging::load_mask(&mask_path).map(|m| (heat, m)).map_err(|e| e.to_string()));
        match loaded {
            Ok((heatmap, mask)) => items.push(ScoreItem {
                record_id: id.clone(),
                model_tag: args.model_tag.clone(),
                heatmap,
                mask,
            }),
            Err(reason) => failed.push(fail(reason)),
        }
    }
    let mut rows = interpret::score_batch(&items).rows;
    rows.extend(failed);
    let report = InterpretabilityReport::from_rows(rows, args.variant.map(|v| v.as_str().to_string()));

    let mut out = create(&args.out)?;
    report.write_csv(&mut out).map_err(|e| CliError::new("output", e).at(&args.out))?;
    out.flush().map_err(|e| CliError::new("output", e).at(&args.out))?;
    let sidecar = report.sidecar_json().map_err(|e| CliError::new("output", e))?;
    write_text(&sibling(&args.out, "sidecar.json"), &(sidecar + "\n"))?;
    write_config(&args.out, "score", args)?;
    println!("{}", json!({ "scored": report.scored(), "errored": report.errored() }));
    Ok(EXIT_OK)
}

fn overlay(args: &OverlayArgs) -> Result<i32, CliError> {
    if !(0.0..=1.0).contains(&args.alpha) {
        return Err(CliError::new("usage", format!("--alpha {} outside [0, 1]", args.alpha)));
    }
    let heat = load_heatmap(&args.heatmap).map_err(|e| input_err(&args.heatmap)(&e))?;
    let base: GrayImage = imaging::load_image(&args.image).map_err(|e| input_err(&args.image)(&e))?;
    let heat = if (heat.width(), heat.height()) == (base.width(), base.height()) {
        heat.as_gray().clone()
    } else {
        heat.as_gray()
            .resize(base.width(), base.height())
            .map_err(|e| input_err(&args.heatmap)(&e))?
    };
    let rgb = imaging::overlay_colormap(&heat, &base, args.alpha).map_err(|e| CliError::new("input", e))?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::new("output", e).at(dir))?;
    }
    imaging::save_rgb(&rgb, &args.out).map_err(|e| CliError::new("output", e).at(&args.out))?;
    write_config(&args.out, "overlay", args)?;
    println!("{}", json!({ "width": rgb.width(), "height": rgb.height() }));
    Ok(EXIT_OK)
}

fn toy(args: &ToyArgs) -> Result<i32, CliError> {
    let mut setup = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| input_err(path)(&e))?;
            serde_json::from_str::<ToySetup>(&text).map_err(|e| input_err(path)(&e))?
        }
        None => ToySetup::default(),
    };
    if let Some(epochs) = args.epochs {
        setup.hyper.epochs = epochs;
    }
    setup
        .config
        .validate()
        .map_err(|e| CliError::new("input", e))?;
    if args.runs == 0 {
        return Err(CliError::new("usage", "--runs must be at least 1"));
    }
    let modes: &[ToyMode] = match args.mode {
        ToyModeArg::Fair => &[ToyMode::Fair],
        ToyModeArg::Unfair => &[ToyMode::Unfair],
        ToyModeArg::Both => &ToyMode::ALL,
    };
    let seeds: Vec<u64> = (0..args.runs).map(|k| args.seed.wrapping_add(k)).collect();
    let rows = toylab::sweep(&setup, modes, &seeds);

    let mut out = create(&args.out)?;
    toylab::write_results_csv(&mut out, &rows).map_err(|e| CliError::new("output", e).at(&args.out))?;
    out.flush().map_err(|e| CliError::new("output", e).at(&args.out))?;
    let summary = toylab::SweepSummary::from_rows(&rows);
    let report = json!({
        "summary": summary,
        "unfair_gap_ok": summary.unfair_gap_ok(),
        "fair_gap_ok": summary.fair_gap_ok(),
        "saliency_ok": summary.saliency_ok(),
        "passes": summary.passes(),
    });
    write_json(&sibling(&args.out, "sidecar.json"), &report)?;
    write_json(
        &sibling(&args.out, "config.json"),
        &json!({ "command": "toy", "version": env!("CARGO_PKG_VERSION"), "args": args, "setup": setup }),
    )?;
    println!("{report}");
    Ok(EXIT_OK)
}
