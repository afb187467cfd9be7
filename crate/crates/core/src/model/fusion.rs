//! The three ways of combining modality embeddings.

use std::fmt;
use std::str::FromStr;

use ndarray::{concatenate, s, Array1, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Fusion {
    /// A: `[h_v; h_a; h_t]`
    #[serde(rename = "A")]
    Implicit,
    /// B: `[|h_v − h_a|; |h_v − h_t|; |h_a − h_t|]`
    #[serde(rename = "B")]
    Divergence,
    /// C: `[f_A; f_B]`
    #[serde(rename = "C")]
    Combined,
}

impl Fusion {
    pub const ALL: [Fusion; 3] = [Fusion::Implicit, Fusion::Divergence, Fusion::Combined];

    pub fn letter(self) -> char {
        match self {
            Fusion::Implicit => 'A',
            Fusion::Divergence => 'B',
            Fusion::Combined => 'C',
        }
    }

    pub fn output_dim(self, d: usize) -> usize {
        match self {
            Fusion::Implicit | Fusion::Divergence => 3 * d,
            Fusion::Combined => 6 * d,
        }
    }
}

impl fmt::Display for Fusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Fusion::Implicit => "implicit",
            Fusion::Divergence => "divergence",
            Fusion::Combined => "combined",
        };
        write!(f, "Fusion {} ({name})", self.letter())
    }
}

impl FromStr for Fusion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(Fusion::Implicit),
            "B" | "b" => Ok(Fusion::Divergence),
            "C" | "c" => Ok(Fusion::Combined),
            other => Err(Error::Config(format!("unknown fusion variant {other:?}"))),
        }
    }
}

fn check_lengths(hv: &ArrayView1<f64>, ha: &ArrayView1<f64>, ht: &ArrayView1<f64>) -> Result<usize> {
    let d = hv.len();
    if ha.len() != d || ht.len() != d {
        return Err(Error::Shape(format!(
            "embedding lengths differ: visual {}, audio {}, text {}",
            hv.len(),
            ha.len(),
            ht.len()
        )));
    }
    Ok(d)
}

fn abs_diff(x: &ArrayView1<f64>, y: &ArrayView1<f64>) -> Array1<f64> {
    (x - y).mapv_into(f64::abs)
}

/// Fuses three equal-length modality embeddings.
pub fn fuse(
    hv: ArrayView1<f64>,
    ha: ArrayView1<f64>,
    ht: ArrayView1<f64>,
    variant: Fusion,
) -> Result<Array1<f64>> {
    check_lengths(&hv, &ha, &ht)?;
    let implicit = || concatenate(Axis(0), &[hv, ha, ht]).expect("1-d");
    let divergence = || {
        concatenate(
            Axis(0),
            &[
                abs_diff(&hv, &ha).view(),
                abs_diff(&hv, &ht).view(),
                abs_diff(&ha, &ht).view(),
            ],
        )
        .expect("1-d")
    };
    Ok(match variant {
        Fusion::Implicit => implicit(),
        Fusion::Divergence => divergence(),
        Fusion::Combined => concatenate(Axis(0), &[implicit().view(), divergence().view()])
            .expect("1-d"),
    })
}

/// Gradient of [`fuse`] with respect to each embedding. The subgradient of
/// `|x|` at 0 is taken as 0.
pub fn fuse_backward(
    hv: ArrayView1<f64>,
    ha: ArrayView1<f64>,
    ht: ArrayView1<f64>,
    variant: Fusion,
    dfused: ArrayView1<f64>,
) -> (Array1<f64>, Array1<f64>, Array1<f64>) {
    let d = hv.len();
    let h = [hv, ha, ht];
    let mut grads = [Array1::zeros(d), Array1::zeros(d), Array1::zeros(d)];
    if variant != Fusion::Divergence {
        for (m, g) in grads.iter_mut().enumerate() {
            *g += &dfused.slice(s![m * d..(m + 1) * d]);
        }
    }
    if variant != Fusion::Implicit {
        let offset = if variant == Fusion::Combined { 3 * d } else { 0 };
        for (p, (i, j)) in [(0, 1), (0, 2), (1, 2)].into_iter().enumerate() {
            let block = dfused.slice(s![offset + p * d..offset + (p + 1) * d]);
            for k in 0..d {
                let diff = h[i][k] - h[j][k];
                if diff != 0.0 {
                    let g = block[k] * diff.signum();
                    grads[i][k] += g;
                    grads[j][k] -= g;
                }
            }
        }
    }
    let [dv, da, dt] = grads;
    (dv, da, dt)
}
