//! Multi-model detection consensus and the image score.
//!
//! Aggregation runs in two steps. Detections below the confidence floor are
//! dropped, then survivors are grouped by single-link IoU clustering. Each
//! group becomes one [`ConsensusBox`] carrying its summed confidence `C`, the
//! confidence-weighted box and the number of distinct models `M` that agree.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::domain::{iou, BoundingBox, ConsensusBox, Detection};
use crate::error::{Error, Result};

/// Largest input the exhaustive oracle accepts.
pub const ORACLE_LIMIT: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregationParams {
    pub confidence_floor: f64,
    pub iou_threshold: f64,
    pub group_confidence_floor: f64,
    pub agreement_bonus: f64,
    pub ensemble_size: u8,
    /// Image area in pixels².
    pub image_area: f64,
}

impl Default for AggregationParams {
    fn default() -> Self {
        Self {
            confidence_floor: 0.015,
            iou_threshold: 0.5,
            group_confidence_floor: 0.10,
            agreement_bonus: 0.2,
            ensemble_size: 3,
            image_area: 640.0 * 480.0,
        }
    }
}

impl AggregationParams {
    pub fn with_ensemble_size(self, ensemble_size: u8) -> Self {
        Self { ensemble_size, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = 0.0..=1.0;
        for (name, v) in [
            ("confidence_floor", self.confidence_floor),
            ("iou_threshold", self.iou_threshold),
            ("group_confidence_floor", self.group_confidence_floor),
        ] {
            if !unit.contains(&v) {
                return Err(Error::InvalidParam(format!("{name} = {v} outside [0,1]")));
            }
        }
        if self.ensemble_size == 0 {
            return Err(Error::InvalidParam("ensemble_size must be >= 1".into()));
        }
        if !(self.image_area.is_finite() && self.image_area > 0.0) {
            return Err(Error::InvalidParam("image_area must be positive".into()));
        }
        Ok(())
    }
}

/// Groups overlapping detections into consensus boxes.
///
/// Output is sorted by descending `C`, ties broken by ascending merged
/// `x_min` then `y_min`.
pub fn aggregate(detections: &[Detection], params: &AggregationParams) -> Vec<ConsensusBox> {
    let kept: Vec<&Detection> = detections
        .iter()
        .filter(|d| d.confidence >= params.confidence_floor)
        .collect();

    let mut sets = DisjointSets::new(kept.len());
    for i in 0..kept.len() {
        for j in 0..i {
            if iou(&kept[i].bbox, &kept[j].bbox) >= params.iou_threshold {
                sets.union(i, j);
            }
        }
    }

    // Members per root, in order of first appearance.
    let mut groups: Vec<(usize, Vec<&Detection>)> = Vec::new();
    for (i, det) in kept.iter().enumerate() {
        let root = sets.find(i);
        match groups.iter_mut().find(|(r, _)| *r == root) {
            Some((_, members)) => members.push(det),
            None => groups.push((root, vec![det])),
        }
    }

    let mut out: Vec<ConsensusBox> = groups
        .iter()
        .filter_map(|(_, members)| merge_group(members))
        .filter(|cb| cb.summed_confidence >= params.group_confidence_floor)
        .collect();
    sort_consensus(&mut out);
    out
}

fn merge_group(members: &[&Detection]) -> Option<ConsensusBox> {
    let c: f64 = members.iter().map(|d| d.confidence).sum();
    if c <= 0.0 {
        // A zero-weight group has no defined merged box.
        return None;
    }
    let mut acc = [0.0f64; 4];
    for d in members {
        for (a, v) in acc.iter_mut().zip(d.bbox.coords()) {
            *a += d.confidence * v;
        }
    }
    let models: BTreeSet<_> = members.iter().map(|d| d.model_id).collect();
    let bbox = BoundingBox::new(acc[0] / c, acc[1] / c, acc[2] / c, acc[3] / c)
        .expect("confidence-weighted mean of valid boxes is a valid box");
    Some(ConsensusBox {
        bbox,
        summed_confidence: c,
        agreement: models.len() as u32,
    })
}

/// Canonical output ordering shared by every aggregation route.
pub fn sort_consensus(boxes: &mut [ConsensusBox]) {
    boxes.sort_by(consensus_order);
}

fn consensus_order(a: &ConsensusBox, b: &ConsensusBox) -> Ordering {
    b.summed_confidence
        .total_cmp(&a.summed_confidence)
        .then(a.bbox.x_min().total_cmp(&b.bbox.x_min()))
        .then(a.bbox.y_min().total_cmp(&b.bbox.y_min()))
        .then(a.bbox.x_max().total_cmp(&b.bbox.x_max()))
        .then(a.bbox.y_max().total_cmp(&b.bbox.y_max()))
        .then(a.agreement.cmp(&b.agreement))
}

/// Area- and agreement-weighted sum over consensus boxes, normalized by
/// ensemble size so that thresholds stay comparable across ensembles.
pub fn image_score(boxes: &[ConsensusBox], params: &AggregationParams) -> f64 {
    let norm = 3.0 / params.ensemble_size as f64;
    boxes
        .iter()
        .map(|b| {
            let bonus = 1.0 + params.agreement_bonus * (b.agreement as f64 - 1.0);
            b.summed_confidence * (b.bbox.area() / params.image_area) * bonus * norm
        })
        .sum()
}

/// Exhaustive reference for [`aggregate`], used by tests.
///
/// Builds the full IoU adjacency matrix, takes its transitive closure and
/// reads components off the closure rows. Quadratic memory, cubic time.
pub fn brute_force_aggregate(detections: &[Detection], params: &AggregationParams) -> Result<Vec<ConsensusBox>> {
    if detections.len() > ORACLE_LIMIT {
        return Err(Error::OracleTooLarge {
            limit: ORACLE_LIMIT,
            got: detections.len(),
        });
    }
    let kept: Vec<Detection> = detections
        .iter()
        .filter(|d| d.confidence >= params.confidence_floor)
        .copied()
        .collect();
    let n = kept.len();
    let mut reach = vec![vec![false; n]; n];
    for i in 0..n {
        for j in 0..n {
            reach[i][j] = i == j || iou(&kept[i].bbox, &kept[j].bbox) >= params.iou_threshold;
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if reach[i][k] && reach[k][j] {
                    reach[i][j] = true;
                }
            }
        }
    }

    let mut out = Vec::new();
    for (i, row) in reach.iter().enumerate() {
        // Component representative is its lowest index.
        if row[..i].iter().any(|&r| r) {
            continue;
        }
        let members: Vec<&Detection> = (0..n).filter(|&j| row[j]).map(|j| &kept[j]).collect();
        let c: f64 = members.iter().map(|d| d.confidence).sum();
        if c <= 0.0 || c < params.group_confidence_floor {
            continue;
        }
        let coord = |k: usize| members.iter().map(|d| d.confidence * d.bbox.coords()[k]).sum::<f64>() / c;
        let mut ids: Vec<u8> = members.iter().map(|d| d.model_id.0).collect();
        ids.sort_unstable();
        ids.dedup();
        out.push(ConsensusBox {
            bbox: BoundingBox::new(coord(0), coord(1), coord(2), coord(3))?,
            summed_confidence: c,
            agreement: ids.len() as u32,
        });
    }
    sort_consensus(&mut out);
    Ok(out)
}

struct DisjointSets {
    parent: Vec<usize>,
}

impl DisjointSets {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // lower index wins so roots are stable
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}
