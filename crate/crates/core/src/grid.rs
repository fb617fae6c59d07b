//! Per-head score grids and head selection.

use alloc::string::String;
use alloc::vec::Vec;

use crate::format::HeadCoord;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum ProbeKind {
    Ridge,
    Mlp,
}

impl ProbeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ProbeKind::Ridge => "ridge",
            ProbeKind::Mlp => "mlp",
        }
    }
}

/// How the reported head was chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Protocol {
    /// Best head picked directly on the test prompt.
    #[cfg_attr(feature = "serde", serde(alias = "test-set"))]
    TestSetSelected,
    /// Best head picked on a validation prompt held out of training, then
    /// reported on the test prompt.
    HeldOut,
}

impl Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::TestSetSelected => "test-set-selected",
            Protocol::HeldOut => "held-out",
        }
    }
}

/// QWK of every head for one trait and test prompt, layer-major.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HeadGrid {
    #[cfg_attr(feature = "serde", serde(rename = "trait"))]
    pub trait_name: String,
    pub test_prompt: i64,
    pub probe_kind: ProbeKind,
    pub n_layers: usize,
    pub n_heads: usize,
    pub qwk: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BestHead {
    pub coord: HeadCoord,
    pub qwk: f64,
}

impl HeadGrid {
    pub fn new(
        trait_name: impl Into<String>,
        test_prompt: i64,
        probe_kind: ProbeKind,
        n_layers: usize,
        n_heads: usize,
        qwk: Vec<f64>,
    ) -> Result<Self> {
        let g = Self {
            trait_name: trait_name.into(),
            test_prompt,
            probe_kind,
            n_layers,
            n_heads,
            qwk,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.qwk.len() != self.n_layers * self.n_heads {
            return Err(Error::DimensionMismatch {
                expected: self.n_layers * self.n_heads,
                got: self.qwk.len(),
            });
        }
        if !self.qwk.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("head grid"));
        }
        Ok(())
    }

    pub fn get(&self, coord: HeadCoord) -> f64 {
        self.qwk[coord.layer * self.n_heads + coord.head]
    }

    pub fn coord_of(&self, index: usize) -> HeadCoord {
        HeadCoord::new(index / self.n_heads, index % self.n_heads)
    }

    pub fn row(&self, layer: usize) -> &[f64] {
        &self.qwk[layer * self.n_heads..(layer + 1) * self.n_heads]
    }

    /// Heads ordered by descending QWK, ties by ascending `(layer, head)`.
    pub fn ranked(&self) -> Vec<BestHead> {
        ranked_by(&self.qwk, self.n_heads)
    }
}

fn ranked_by(values: &[f64], n_heads: usize) -> Vec<BestHead> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.into_iter()
        .map(|i| BestHead {
            coord: HeadCoord::new(i / n_heads, i % n_heads),
            qwk: values[i],
        })
        .collect()
}

/// Grid argmax; ties go to the lexicographically smallest `(layer, head)`.
pub fn best_head(grid: &HeadGrid) -> Result<BestHead> {
    if grid.qwk.is_empty() {
        return Err(Error::Empty("head grid"));
    }
    let mut best = 0;
    for (i, &v) in grid.qwk.iter().enumerate() {
        if v > grid.qwk[best] {
            best = i;
        }
    }
    Ok(BestHead {
        coord: grid.coord_of(best),
        qwk: grid.qwk[best],
    })
}

/// The `k` best heads under the same ordering as [`best_head`].
pub fn top_k(grid: &HeadGrid, k: usize) -> Vec<BestHead> {
    let mut r = grid.ranked();
    r.truncate(k);
    r
}

/// Head maximizing the mean QWK across several grids of equal geometry.
///
/// Returns the head and its mean score.
pub fn best_average_head<'a>(grids: impl IntoIterator<Item = &'a HeadGrid>) -> Result<BestHead> {
    let grids: Vec<&HeadGrid> = grids.into_iter().collect();
    let first = grids.first().ok_or(Error::Empty("grids"))?;
    let (nl, nh) = (first.n_layers, first.n_heads);
    let mut mean = alloc::vec![0.0; nl * nh];
    for g in &grids {
        if (g.n_layers, g.n_heads) != (nl, nh) {
            return Err(Error::DimensionMismatch {
                expected: nl * nh,
                got: g.n_layers * g.n_heads,
            });
        }
        for (m, v) in mean.iter_mut().zip(&g.qwk) {
            *m += v;
        }
    }
    let k = grids.len() as f64;
    mean.iter_mut().for_each(|m| *m /= k);
    ranked_by(&mean, nh)
        .into_iter()
        .next()
        .ok_or(Error::Empty("head grid"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn grid(nl: usize, nh: usize, qwk: Vec<f64>) -> HeadGrid {
        HeadGrid::new("holistic", 1, ProbeKind::Ridge, nl, nh, qwk).unwrap()
    }

    #[test]
    fn unique_maximum() {
        let mut v = vec![0.1; 32 * 32];
        v[5 * 32 + 23] = 0.8;
        let b = best_head(&grid(32, 32, v)).unwrap();
        assert_eq!(b.coord, HeadCoord::new(5, 23));
        assert_eq!(b.qwk, 0.8);
    }

    #[test]
    fn ties_go_to_smallest_coord() {
        let b = best_head(&grid(2, 2, vec![0.3; 4])).unwrap();
        assert_eq!(b.coord, HeadCoord::new(0, 0));
        let b = best_head(&grid(2, 2, vec![0.1, 0.5, 0.5, 0.2])).unwrap();
        assert_eq!(b.coord, HeadCoord::new(0, 1));
    }

    #[test]
    fn ranking_agrees_with_best_head() {
        let g = grid(2, 3, vec![0.2, 0.9, 0.4, 0.9, -0.1, 0.4]);
        let r = top_k(&g, 4);
        let coords: Vec<_> = r.iter().map(|b| (b.coord.layer, b.coord.head)).collect();
        assert_eq!(coords, vec![(0, 1), (1, 0), (0, 2), (1, 2)]);
        assert_eq!(r[0].coord, best_head(&g).unwrap().coord);
    }

    #[test]
    fn average_head() {
        let a = grid(1, 3, vec![0.9, 0.1, 0.5]);
        let b = grid(1, 3, vec![0.0, 0.2, 0.5]);
        let best = best_average_head([&a, &b]).unwrap();
        assert_eq!(best.coord, HeadCoord::new(0, 2));
        assert!((best.qwk - 0.5).abs() < 1e-15);
    }

    #[test]
    fn invalid_grids() {
        assert!(HeadGrid::new("t", 1, ProbeKind::Ridge, 2, 2, vec![0.0; 3]).is_err());
        assert!(HeadGrid::new("t", 1, ProbeKind::Ridge, 1, 1, vec![f64::NAN]).is_err());
        let empty = HeadGrid {
            trait_name: "t".into(),
            test_prompt: 1,
            probe_kind: ProbeKind::Ridge,
            n_layers: 0,
            n_heads: 0,
            qwk: vec![],
        };
        assert!(best_head(&empty).is_err());
    }
}
