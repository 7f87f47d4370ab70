//! Reads the bundled LIDC fixtures, groups reads into nodules and prints
//! the per-slice manifest.
//!
//!     cargo run --example parse_annotations

use std::collections::BTreeMap;
use std::path::Path;

use splitproof::annotations::{
    filter_min_readers, group_reads_into_nodules, parse_lidc_document, NoduleLabel, ScanIdentity,
    DEFAULT_MATCH_TOLERANCE_PX,
};
use splitproof::manifest::build_manifest;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/lidc");
    let mut nodules = Vec::new();
    let mut slice_map = BTreeMap::new();
    for name in ["LIDC-0001.xml", "LIDC-0002.xml"] {
        let doc = parse_lidc_document(&std::fs::read(dir.join(name))?)?;
        let stem = name.trim_end_matches(".xml");
        let scan = ScanIdentity::new(doc.series_uid.unwrap_or_else(|| stem.into()), stem);
        let grouped = group_reads_into_nodules(&scan, &doc.sessions, DEFAULT_MATCH_TOLERANCE_PX)?;
        for n in &grouped {
            println!(
                "{} nodule: {} reads, consensus {:?}, label {:?}",
                n.scan_id,
                n.reads.len(),
                n.consensus_malignancy,
                n.label
            );
        }
        nodules.extend(grouped);
    }

    let kept: Vec<_> = filter_min_readers(nodules, 3)?
        .into_iter()
        .filter(|n| n.label != NoduleLabel::Excluded)
        .collect();
    // pretend every scan has slices at the annotated z positions
    for n in &kept {
        let zs: &mut Vec<f64> = slice_map.entry(n.scan_id.clone()).or_default();
        zs.extend(&n.z_positions);
    }
    for zs in slice_map.values_mut() {
        zs.sort_by(f64::total_cmp);
        zs.dedup();
    }

    let manifest = build_manifest(&kept, None, &slice_map)?;
    println!("\n{} records from {} nodules", manifest.len(), kept.len());
    manifest.write_jsonl(std::io::stdout())?;
    Ok(())
}
