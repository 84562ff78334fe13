//! Instance-segmentation quality metrics (DQ / SQ / PQ) for quantifying
//! functional drift between two instance maps.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};

/// A labeled instance map: 0 = background, >0 = instance id. Ids need not be
/// contiguous. `class_of` is only required for class-averaged metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceMap {
    pub height: usize,
    pub width: usize,
    pub ids: Vec<u32>,
    pub class_of: Option<BTreeMap<u32, u32>>,
}

impl InstanceMap {
    pub fn new(height: usize, width: usize, ids: Vec<u32>) -> Self {
        assert_eq!(ids.len(), height * width);
        InstanceMap { height, width, ids, class_of: None }
    }

    pub fn with_classes(mut self, class_of: BTreeMap<u32, u32>) -> Self {
        self.class_of = Some(class_of);
        self
    }

    fn instance_sizes(&self) -> BTreeMap<u32, usize> {
        let mut sizes = BTreeMap::new();
        for &id in &self.ids {
            if id != 0 {
                *sizes.entry(id).or_insert(0) += 1;
            }
        }
        sizes
    }

    /// CSV grid of integers, one row per line.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rows: Vec<Vec<u32>> = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let row: Vec<u32> = line
                .split(',')
                .map(|c| c.trim().parse::<u32>().map_err(|_| Error::MalformedManifest(format!("bad csv cell {c:?}"))))
                .collect::<Result<_>>()?;
            rows.push(row);
        }
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::MalformedManifest("ragged csv grid".into()));
        }
        Ok(InstanceMap::new(height, width, rows.concat()))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for r in 0..self.height {
            let row: Vec<String> =
                self.ids[r * self.width..(r + 1) * self.width].iter().map(|v| v.to_string()).collect();
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }

    /// Compact binary: magic "IMAP", u32 H, u32 W, H*W little-endian u32 ids,
    /// then an optional class table (u32 count, then count pairs of u32 id,
    /// u32 class).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(12 + 4 * self.ids.len());
        buf.extend_from_slice(b"IMAP");
        buf.extend_from_slice(&(self.height as u32).to_le_bytes());
        buf.extend_from_slice(&(self.width as u32).to_le_bytes());
        for &id in &self.ids {
            buf.extend_from_slice(&id.to_le_bytes());
        }
        if let Some(classes) = &self.class_of {
            buf.extend_from_slice(&(classes.len() as u32).to_le_bytes());
            for (&id, &class) in classes {
                buf.extend_from_slice(&id.to_le_bytes());
                buf.extend_from_slice(&class.to_le_bytes());
            }
        }
        buf
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let u32_at = |off: usize| -> Result<u32> {
            buf.get(off..off + 4)
                .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
                .ok_or_else(|| Error::MalformedManifest("truncated instance map".into()))
        };
        if buf.len() < 12 || &buf[..4] != b"IMAP" {
            return Err(Error::BadMagic);
        }
        let height = u32_at(4)? as usize;
        let width = u32_at(8)? as usize;
        let n = height * width;
        let mut ids = Vec::with_capacity(n);
        for i in 0..n {
            ids.push(u32_at(12 + 4 * i)?);
        }
        let mut map = InstanceMap::new(height, width, ids);
        let mut off = 12 + 4 * n;
        if off < buf.len() {
            let count = u32_at(off)? as usize;
            off += 4;
            let mut classes = BTreeMap::new();
            for _ in 0..count {
                classes.insert(u32_at(off)?, u32_at(off + 4)?);
                off += 8;
            }
            if off != buf.len() {
                return Err(Error::MalformedManifest("trailing bytes in instance map".into()));
            }
            map.class_of = Some(classes);
        }
        Ok(map)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// (pred id, gt id, IoU); every IoU >= 0.5 and each id appears at most once.
    pub pairs: Vec<(u32, u32, f64)>,
    pub false_positives: Vec<u32>,
    pub false_negatives: Vec<u32>,
}

/// Matches predicted instances against ground truth at IoU >= 0.5. The
/// threshold makes matches essentially unique; ties at exactly 0.5 are broken
/// by higher IoU first, then lower gt id.
pub fn match_instances(pred: &InstanceMap, gt: &InstanceMap) -> Result<MatchResult> {
    if pred.height != gt.height || pred.width != gt.width {
        return Err(Error::DimensionMismatch {
            pred_h: pred.height,
            pred_w: pred.width,
            gt_h: gt.height,
            gt_w: gt.width,
        });
    }
    let pred_sizes = pred.instance_sizes();
    let gt_sizes = gt.instance_sizes();
    let mut inter: BTreeMap<(u32, u32), usize> = BTreeMap::new();
    for (&p, &g) in pred.ids.iter().zip(&gt.ids) {
        if p != 0 && g != 0 {
            *inter.entry((p, g)).or_insert(0) += 1;
        }
    }

    let mut candidates: Vec<(u32, u32, f64)> = Vec::new();
    for (&(p, g), &i) in &inter {
        let union = pred_sizes[&p] + gt_sizes[&g] - i;
        let iou = i as f64 / union as f64;
        if iou >= 0.5 {
            candidates.push((p, g, iou));
        }
    }
    candidates.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap().then(a.1.cmp(&b.1)).then(a.0.cmp(&b.0)));

    let mut used_pred = BTreeSet::new();
    let mut used_gt = BTreeSet::new();
    let mut pairs = Vec::new();
    for (p, g, iou) in candidates {
        if used_pred.insert(p) && used_gt.insert(g) {
            pairs.push((p, g, iou));
        }
    }
    pairs.sort_by_key(|&(p, g, _)| (g, p));

    let false_positives = pred_sizes.keys().filter(|p| !used_pred.contains(p)).copied().collect();
    let false_negatives = gt_sizes.keys().filter(|g| !used_gt.contains(g)).copied().collect();
    Ok(MatchResult { pairs, false_positives, false_negatives })
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct PqScores {
    pub dq: f64,
    pub sq: f64,
    pub pq: f64,
}

/// DQ = |TP| / (|TP| + 0.5|FP| + 0.5|FN|), SQ = mean IoU of matches (0 when
/// there are none), PQ = DQ * SQ.
pub fn compute_pq(m: &MatchResult) -> PqScores {
    pq_from_counts(
        m.pairs.len(),
        m.false_positives.len(),
        m.false_negatives.len(),
        m.pairs.iter().map(|p| p.2).sum(),
    )
}

fn pq_from_counts(tp: usize, fp: usize, fnn: usize, iou_sum: f64) -> PqScores {
    let denom = tp as f64 + 0.5 * fp as f64 + 0.5 * fnn as f64;
    let dq = if denom == 0.0 { 0.0 } else { tp as f64 / denom };
    let sq = if tp == 0 { 0.0 } else { iou_sum / tp as f64 };
    PqScores { dq, sq, pq: dq * sq }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ClassAveraged {
    pub m_dq: f64,
    pub m_sq: f64,
    pub m_pq: f64,
    pub per_class: BTreeMap<u32, PqScores>,
}

/// Class-averaged metrics over a set of (pred, gt) image pairs: TP/FP/FN and
/// IoU sums are pooled per class across all pairs first, then per-class
/// scores are averaged (unweighted) over classes with at least one
/// ground-truth instance.
pub fn mean_over_classes(pairs: &[(&InstanceMap, &InstanceMap)]) -> Result<ClassAveraged> {
    // class -> (tp, fp, fn, iou_sum)
    let mut pooled: BTreeMap<u32, (usize, usize, usize, f64)> = BTreeMap::new();
    let mut gt_classes: BTreeSet<u32> = BTreeSet::new();
    for (pred, gt) in pairs {
        let pc = pred.class_of.as_ref().ok_or(Error::MissingClassLabels)?;
        let gc = gt.class_of.as_ref().ok_or(Error::MissingClassLabels)?;
        let m = match_instances(pred, gt)?;
        for &(p, g, iou) in &m.pairs {
            let (pcl, gcl) = (
                *pc.get(&p).ok_or(Error::MissingClassLabels)?,
                *gc.get(&g).ok_or(Error::MissingClassLabels)?,
            );
            if pcl == gcl {
                let e = pooled.entry(gcl).or_default();
                e.0 += 1;
                e.3 += iou;
            } else {
                // class-confused match counts against both classes
                pooled.entry(pcl).or_default().1 += 1;
                pooled.entry(gcl).or_default().2 += 1;
            }
        }
        for p in &m.false_positives {
            pooled.entry(*pc.get(p).ok_or(Error::MissingClassLabels)?).or_default().1 += 1;
        }
        for g in &m.false_negatives {
            pooled.entry(*gc.get(g).ok_or(Error::MissingClassLabels)?).or_default().2 += 1;
        }
        for id in gt.instance_sizes().keys() {
            gt_classes.insert(*gc.get(id).ok_or(Error::MissingClassLabels)?);
        }
    }

    let mut per_class = BTreeMap::new();
    let (mut sd, mut ss, mut sp, mut n) = (0.0, 0.0, 0.0, 0usize);
    for (&class, &(tp, fp, fnn, iou)) in &pooled {
        let s = pq_from_counts(tp, fp, fnn, iou);
        per_class.insert(class, s);
        if gt_classes.contains(&class) {
            sd += s.dq;
            ss += s.sq;
            sp += s.pq;
            n += 1;
        }
    }
    if n == 0 {
        return Ok(ClassAveraged { m_dq: 0.0, m_sq: 0.0, m_pq: 0.0, per_class });
    }
    Ok(ClassAveraged {
        m_dq: sd / n as f64,
        m_sq: ss / n as f64,
        m_pq: sp / n as f64,
        per_class,
    })
}
