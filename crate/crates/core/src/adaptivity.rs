//! Marking and the mark, adapt, transfer step.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{transfer_with, DgField};
use crate::mesh::{Flag, Mesh};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    FractionOfCells,
    FractionOfError,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MarkingPolicy {
    pub strategy: Strategy,
    pub refine_fraction: f64,
    pub coarsen_fraction: f64,
    pub min_level: u8,
    pub max_level: u8,
    pub max_cells: Option<usize>,
    /// sum squared indicators in the error-fraction strategy
    pub squared: bool,
}

impl Default for MarkingPolicy {
    fn default() -> Self {
        MarkingPolicy {
            strategy: Strategy::FractionOfCells,
            refine_fraction: 0.10,
            coarsen_fraction: 0.05,
            min_level: 0,
            max_level: 12,
            max_cells: None,
            squared: true,
        }
    }
}

impl MarkingPolicy {
    pub fn validate(&self) -> Result<()> {
        let ok = |f: f64| (0.0..=1.0).contains(&f);
        if !ok(self.refine_fraction) || !ok(self.coarsen_fraction) {
            return Err(Error::Config("marking fractions must lie in [0, 1]".into()));
        }
        if self.strategy == Strategy::FractionOfCells && self.refine_fraction + self.coarsen_fraction > 1.0 {
            return Err(Error::Config("refine + coarsen fraction exceeds 1".into()));
        }
        if self.min_level > self.max_level {
            return Err(Error::Config("min_level above max_level".into()));
        }
        Ok(())
    }
}

/// Cells flagged for refinement and for coarsening, ascending.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MarkFlags {
    pub refine: Vec<usize>,
    pub coarsen: Vec<usize>,
}

impl MarkFlags {
    pub fn to_flags(&self, n: usize) -> Vec<Flag> {
        let mut f = vec![Flag::Keep; n];
        for &c in &self.coarsen {
            f[c] = Flag::Coarsen;
        }
        for &c in &self.refine {
            f[c] = Flag::Refine;
        }
        f
    }
}

/// Marks cells from indicators; pure in its inputs.
pub fn mark(indicators: &[f64], policy: &MarkingPolicy) -> Result<MarkFlags> {
    policy.validate()?;
    if let Some(c) = indicators.iter().position(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::NonFinite(format!("indicator {} of cell {c}", indicators[c])));
    }
    let n = indicators.len();
    // descending, ties by ascending index
    let mut desc: Vec<usize> = (0..n).collect();
    desc.sort_by(|&a, &b| indicators[b].total_cmp(&indicators[a]).then(a.cmp(&b)));
    let mut asc: Vec<usize> = (0..n).collect();
    asc.sort_by(|&a, &b| indicators[a].total_cmp(&indicators[b]).then(a.cmp(&b)));
    let (refine, coarsen): (Vec<usize>, Vec<usize>) = match policy.strategy {
        Strategy::FractionOfCells => {
            let nr = (policy.refine_fraction * n as f64).ceil() as usize;
            let nc = (policy.coarsen_fraction * n as f64).ceil() as usize;
            (desc[..nr.min(n)].to_vec(), asc[..nc.min(n)].to_vec())
        }
        Strategy::FractionOfError => {
            let w = |c: usize| {
                if policy.squared {
                    indicators[c] * indicators[c]
                } else {
                    indicators[c]
                }
            };
            let total: f64 = indicators.iter().enumerate().map(|(c, _)| w(c)).sum();
            let mut refine = Vec::new();
            let mut acc = 0.0;
            for &c in &desc {
                if acc >= policy.refine_fraction * total {
                    break;
                }
                acc += w(c);
                refine.push(c);
            }
            let mut coarsen = Vec::new();
            let mut acc = 0.0;
            for &c in &asc {
                if acc + w(c) > policy.coarsen_fraction * total {
                    break;
                }
                acc += w(c);
                coarsen.push(c);
            }
            (refine, coarsen)
        }
    };
    let mut refine = refine;
    refine.sort_unstable();
    let mut coarsen: Vec<usize> = coarsen.into_iter().filter(|c| refine.binary_search(c).is_err()).collect();
    coarsen.sort_unstable();
    Ok(MarkFlags { refine, coarsen })
}

/// Drops flags that would leave the level bounds and trims refinement to
/// the cell budget (largest indicators kept).
pub fn restrict_flags(flags: &MarkFlags, mesh: &Mesh, indicators: &[f64], policy: &MarkingPolicy) -> MarkFlags {
    let mut refine: Vec<usize> = flags
        .refine
        .iter()
        .copied()
        .filter(|&c| mesh.key(c).level < policy.max_level)
        .collect();
    let coarsen: Vec<usize> = flags
        .coarsen
        .iter()
        .copied()
        .filter(|&c| mesh.key(c).level > policy.min_level)
        .collect();
    if let Some(cap) = policy.max_cells {
        let room = cap.saturating_sub(mesh.n_cells()) / 3;
        if refine.len() > room {
            refine.sort_by(|&a, &b| indicators[b].total_cmp(&indicators[a]).then(a.cmp(&b)));
            refine.truncate(room);
            refine.sort_unstable();
        }
    }
    MarkFlags { refine, coarsen }
}

/// Result of one adaptation.
#[derive(Clone, Debug)]
pub struct Adapted {
    pub mesh: Arc<Mesh>,
    /// refine-only mesh covering both the old and the new mesh
    pub aux: Arc<Mesh>,
    pub flags: MarkFlags,
    /// fields moved to the new mesh, in input order
    pub fields: Vec<DgField>,
}

/// Mark, adapt, transfer `fields` (all on `mesh`) and advance the auxiliary
/// mesh.
pub fn adapt_step(mesh: &Arc<Mesh>, indicators: &[f64], fields: &[&DgField], policy: &MarkingPolicy) -> Result<Adapted> {
    if indicators.len() != mesh.n_cells() {
        return Err(Error::DimensionMismatch("one indicator per cell expected".into()));
    }
    let flags = restrict_flags(&mark(indicators, policy)?, mesh, indicators, policy);
    let fl = flags.to_flags(mesh.n_cells());
    let (next, map) = mesh.execute_adaptation(&fl)?;
    let next = Arc::new(next);
    let aux = Arc::new(mesh.advance_auxiliary(&fl)?);
    let fields = fields
        .iter()
        .map(|f| transfer_with(f, next.clone(), &map))
        .collect::<Result<Vec<_>>>()?;
    Ok(Adapted {
        mesh: next,
        aux,
        flags,
        fields,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fraction_of_cells_counts() {
        let ind: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let f = mark(&ind, &MarkingPolicy::default()).unwrap();
        assert_eq!(f.refine, (90..100).collect::<Vec<_>>());
        assert_eq!(f.coarsen, (0..5).collect::<Vec<_>>());
    }

    #[test]
    fn error_fraction_takes_smallest_prefix() {
        let p = MarkingPolicy {
            strategy: Strategy::FractionOfError,
            refine_fraction: 0.5,
            coarsen_fraction: 0.0,
            ..Default::default()
        };
        let f = mark(&[4.0, 3.0, 2.0, 1.0], &p).unwrap();
        assert_eq!(f.refine, vec![0]);
        let z = mark(&[0.0; 8], &p).unwrap();
        assert!(z.refine.is_empty());
    }

    #[test]
    fn nan_is_rejected() {
        assert!(mark(&[1.0, f64::NAN], &MarkingPolicy::default()).is_err());
    }
}
