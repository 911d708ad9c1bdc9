//! Energy heat maps: a CSV of grid energies and a binary PPM.
//!
//! Colormap: min-max linear in energy, from white `(255, 255, 255)` at the
//! lowest energy to red `(255, 0, 0)` at the highest. A constant field is
//! all white. Image row 0 is the top of the domain (largest y).

use dxmi_core::data::DomainBox;
use dxmi_core::Tensor;

use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyGrid {
    pub size: usize,
    /// Cell-center x coordinates, left to right.
    pub xs: Vec<f64>,
    /// Cell-center y coordinates, top to bottom.
    pub ys: Vec<f64>,
    /// Row-major, `values[r * size + c]` at `(xs[c], ys[r])`.
    pub values: Vec<f64>,
}

/// Evaluates `energy` at the centers of a `size × size` grid over a 2D box.
pub fn energy_grid(
    domain: &DomainBox,
    size: usize,
    energy: impl Fn(&Tensor) -> dxmi_core::Result<Vec<f64>>,
) -> Result<EnergyGrid, CliError> {
    if size < 2 {
        return Err(CliError::Usage(format!("grid must be >= 2, got {size}")));
    }
    if domain.dim() != 2 {
        return Err(CliError::Usage(format!("rendering needs 2D data, got dimension {}", domain.dim())));
    }
    let (lo, hi) = (domain.lower(), domain.upper());
    let centers = |k: usize| -> Vec<f64> {
        let h = (hi[k] - lo[k]) / size as f64;
        (0..size).map(|i| lo[k] + (i as f64 + 0.5) * h).collect()
    };
    let xs = centers(0);
    let mut ys = centers(1);
    ys.reverse();
    let pts: Vec<f64> = ys.iter().flat_map(|&y| xs.iter().flat_map(move |&x| [x, y])).collect();
    let values = energy(&Tensor::matrix(size * size, 2, pts))?;
    if values.len() != size * size || values.iter().any(|v| !v.is_finite()) {
        return Err(CliError::Numeric("energy grid has missing or non-finite values".into()));
    }
    Ok(EnergyGrid { size, xs, ys, values })
}

impl EnergyGrid {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,y,energy\n");
        for (r, y) in self.ys.iter().enumerate() {
            for (c, x) in self.xs.iter().enumerate() {
                s.push_str(&format!("{x},{y},{}\n", self.values[r * self.size + c]));
            }
        }
        s
    }

    fn range(&self) -> (f64, f64) {
        self.values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)))
    }

    /// RGB pixels in image order.
    pub fn pixels(&self) -> Vec<[u8; 3]> {
        let (min, max) = self.range();
        self.values
            .iter()
            .map(|&v| {
                let t = if max > min { (v - min) / (max - min) } else { 0.0 };
                let g = (255.0 * (1.0 - t)).round() as u8;
                [255, g, g]
            })
            .collect()
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.size, self.size).into_bytes();
        out.extend(self.pixels().into_iter().flatten());
        out
    }
}
