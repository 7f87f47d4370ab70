use std::cmp::Ordering;
use std::collections::BTreeMap;

use super::{AnnotationError, NoduleAnnotation, RadiologistRead, ReadingSession, Result, ScanIdentity};

/// z positions are compared after rounding to this many steps per mm.
const Z_KEY_SCALE: f64 = 1000.0;

/// Clusters reads from different radiologists that outline the same nodule.
///
/// Two reads by different readers are linked when, on some z position both
/// of them contour, their centroids lie within `match_tolerance_px` of each
/// other. Annotations are the connected components of that relation, so
/// every read lands in exactly one annotation. Output order is canonical
/// (by z coverage, then reader and nodule id), independent of input order.
pub fn group_reads_into_nodules(
    scan: &ScanIdentity,
    sessions: &[ReadingSession],
    match_tolerance_px: f64,
) -> Result<Vec<NoduleAnnotation>> {
    if !(match_tolerance_px > 0.0) {
        return Err(AnnotationError::InvalidArgument(
            "match tolerance must be positive".into(),
        ));
    }
    let reads: Vec<&RadiologistRead> = sessions.iter().flat_map(|s| s.reads.iter()).collect();
    let centroids: Vec<BTreeMap<i64, (f64, f64)>> = reads.iter().map(|r| centroids_by_slice(r)).collect();

    let mut sets = DisjointSets::new(reads.len());
    for i in 0..reads.len() {
        for j in (i + 1)..reads.len() {
            if reads[i].reader_index == reads[j].reader_index {
                continue;
            }
            let close = centroids[i].iter().any(|(z, &(xa, ya))| {
                centroids[j]
                    .get(z)
                    .is_some_and(|&(xb, yb)| (xa - xb).hypot(ya - yb) <= match_tolerance_px)
            });
            if close {
                sets.union(i, j);
            }
        }
    }

    let mut clusters: BTreeMap<usize, Vec<RadiologistRead>> = BTreeMap::new();
    for (i, read) in reads.iter().enumerate() {
        clusters.entry(sets.find(i)).or_default().push((*read).clone());
    }

    let mut annotations: Vec<NoduleAnnotation> = clusters
        .into_values()
        .map(|mut members| {
            members.sort_by(compare_reads);
            NoduleAnnotation::from_reads(scan, members)
        })
        .collect();
    annotations.sort_by(|a, b| {
        compare_f64_lists(&a.z_positions, &b.z_positions).then_with(|| compare_reads(&a.reads[0], &b.reads[0]))
    });
    Ok(annotations)
}

fn z_key(z: f64) -> i64 {
    (z * Z_KEY_SCALE).round() as i64
}

/// Mean of all contour points of a read on each slice it touches.
fn centroids_by_slice(read: &RadiologistRead) -> BTreeMap<i64, (f64, f64)> {
    let mut sums: BTreeMap<i64, (f64, f64, usize)> = BTreeMap::new();
    for contour in &read.contours {
        let entry = sums.entry(z_key(contour.z_position)).or_insert((0.0, 0.0, 0));
        for &(x, y) in &contour.points {
            entry.0 += x;
            entry.1 += y;
            entry.2 += 1;
        }
    }
    sums.into_iter()
        .map(|(z, (sx, sy, n))| (z, (sx / n as f64, sy / n as f64)))
        .collect()
}

fn compare_reads(a: &RadiologistRead, b: &RadiologistRead) -> Ordering {
    a.reader_index
        .cmp(&b.reader_index)
        .then_with(|| a.nodule_id_raw.cmp(&b.nodule_id_raw))
        .then_with(|| {
            let za: Vec<f64> = a.contours.iter().map(|c| c.z_position).collect();
            let zb: Vec<f64> = b.contours.iter().map(|c| c.z_position).collect();
            compare_f64_lists(&za, &zb)
        })
}

fn compare_f64_lists(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or_else(|| a.len().cmp(&b.len()))
}

struct DisjointSets {
    parent: Vec<usize>,
}

impl DisjointSets {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}
