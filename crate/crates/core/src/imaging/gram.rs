use super::ImageTensor;
use crate::tensor::kernels;

/// Channel-correlation matrix of a feature map, normalised by `C * H * W`.
#[derive(Clone, Debug, PartialEq)]
pub struct GramMatrix {
    channels: usize,
    values: Vec<f64>,
    normaliser: usize,
}

impl GramMatrix {
    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.channels + j]
    }

    pub fn normaliser(&self) -> usize {
        self.normaliser
    }

    /// Squared Frobenius distance to another Gram of the same size.
    pub fn frobenius_sq(&self, other: &GramMatrix) -> f64 {
        assert_eq!(self.channels, other.channels);
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    pub fn to_matrix(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_row_slice(self.channels, self.channels, &self.values)
    }
}

pub fn gram_matrix(features: &ImageTensor) -> GramMatrix {
    let (c, h, w) = features.dims();
    let g = kernels::gram_forward(features.tensor());
    GramMatrix {
        channels: c,
        values: g.into_data(),
        normaliser: c * h * w,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::ColourSpace;

    #[test]
    fn all_ones_map() {
        let f = ImageTensor::filled(1, 2, 2, 1.0, ColourSpace::Feature).unwrap();
        let g = gram_matrix(&f);
        assert_eq!(g.values(), &[1.0]);
        assert_eq!(g.normaliser(), 4);
    }

    #[test]
    fn disjoint_supports_are_uncorrelated() {
        let f = ImageTensor::from_fn(2, 3, 4, ColourSpace::Feature, |c, y, x| {
            let left = x < 2;
            if (c == 0) == left {
                1.0 + (y + x) as f64
            } else {
                0.0
            }
        })
        .unwrap();
        let g = gram_matrix(&f);
        assert_eq!(g.get(0, 1), 0.0);
        assert_eq!(g.get(1, 0), 0.0);
        assert!(g.get(0, 0) > 0.0 && g.get(1, 1) > 0.0);
    }
}
