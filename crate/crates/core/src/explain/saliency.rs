use ndarray::{s, Array2};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::ExplainError;
use crate::model::PatchDetector;

/// Per-cell confidence drop from sliding-patch occlusion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyMap {
    #[serde(serialize_with = "ser_rows", deserialize_with = "de_rows")]
    pub heat: Array2<f64>,
    pub patch_size: usize,
    pub stride: usize,
    pub baseline_confidence: f64,
    pub detector_id: String,
}

fn ser_rows<S: Serializer>(m: &Array2<f64>, ser: S) -> Result<S::Ok, S::Error> {
    let rows: Vec<Vec<f64>> = m.rows().into_iter().map(|r| r.to_vec()).collect();
    rows.serialize(ser)
}

fn de_rows<'de, D: Deserializer<'de>>(de: D) -> Result<Array2<f64>, D::Error> {
    let rows = Vec::<Vec<f64>>::deserialize(de)?;
    matrix_from_rows(&rows).map_err(serde::de::Error::custom)
}

/// Build a matrix from row vectors; rows must have equal length.
pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<Array2<f64>, ExplainError> {
    let n_rows = rows.len();
    let n_cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != n_cols) {
        return Err(ExplainError::InvalidParameter("image rows have unequal length".into()));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec((n_rows, n_cols), flat)
        .map_err(|e| ExplainError::InvalidParameter(e.to_string()))
}

/// Slide a `patch_size` square over `image` in row-major order with step
/// `stride`, overwrite it with `fill`, re-query the detector and average the
/// confidence drops over every patch that covers a cell. Uncovered cells stay 0.
pub fn saliency_map(
    detector: &dyn PatchDetector,
    image: &Array2<f64>,
    patch_size: usize,
    stride: usize,
    fill: f64,
) -> Result<SaliencyMap, ExplainError> {
    let (rows, cols) = image.dim();
    if patch_size == 0 {
        return Err(ExplainError::InvalidParameter("patch_size must be at least 1".into()));
    }
    if stride == 0 {
        return Err(ExplainError::InvalidParameter("stride must be at least 1".into()));
    }
    if patch_size > rows || patch_size > cols {
        return Err(ExplainError::PatchTooLarge { patch: patch_size, rows, cols });
    }

    let baseline = detector.confidence(image);
    let mut sum = Array2::<f64>::zeros((rows, cols));
    let mut coverage = Array2::<u32>::zeros((rows, cols));
    let mut scratch = image.clone();

    for top in (0..=rows - patch_size).step_by(stride) {
        for left in (0..=cols - patch_size).step_by(stride) {
            let window = s![top..top + patch_size, left..left + patch_size];
            scratch.slice_mut(window).fill(fill);
            let drop = baseline - detector.confidence(&scratch);
            scratch.slice_mut(window).assign(&image.slice(window));

            sum.slice_mut(window).mapv_inplace(|v| v + drop);
            coverage.slice_mut(window).mapv_inplace(|c| c + 1);
        }
    }

    let heat = ndarray::Zip::from(&sum)
        .and(&coverage)
        .map_collect(|&s, &c| if c == 0 { 0.0 } else { s / f64::from(c) });

    Ok(SaliencyMap {
        heat,
        patch_size,
        stride,
        baseline_confidence: baseline,
        detector_id: detector.identifier().to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ConstantDetector, RegionBrightnessDetector};

    fn bright_image() -> Array2<f64> {
        let mut img = Array2::<f64>::from_elem((8, 8), 0.1);
        img.slice_mut(s![2..4, 4..6]).fill(1.0);
        img
    }

    #[test]
    fn constant_detector_gives_zero_heat() {
        let m = saliency_map(&ConstantDetector(0.7), &bright_image(), 3, 1, 0.0).unwrap();
        assert!(m.heat.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn argmax_lands_on_bright_region() {
        let det = RegionBrightnessDetector { top: 2, left: 4, height: 2, width: 2 };
        let m = saliency_map(&det, &bright_image(), 2, 2, 0.0).unwrap();
        // Only the patch at (2,4) overlaps the region: drop = 1.0 - 0.0
        for ((r, c), &v) in m.heat.indexed_iter() {
            if (2..4).contains(&r) && (4..6).contains(&c) {
                assert_eq!(v, 1.0);
            } else {
                assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn non_overlapping_sum_equals_patch_drops() {
        let det = RegionBrightnessDetector { top: 1, left: 1, height: 4, width: 4 };
        let img = Array2::from_shape_fn((6, 6), |(r, c)| ((r * 6 + c) % 7) as f64 / 7.0);
        let m = saliency_map(&det, &img, 3, 3, 0.0).unwrap();
        let base = det.confidence(&img);
        let mut drops = 0.0;
        for top in [0, 3] {
            for left in [0, 3] {
                let mut occluded = img.clone();
                occluded.slice_mut(s![top..top + 3, left..left + 3]).fill(0.0);
                drops += (base - det.confidence(&occluded)) * 9.0;
            }
        }
        assert!((m.heat.sum() - drops).abs() < 1e-12);
    }

    #[test]
    fn overlapping_contributions_are_averaged() {
        // 1x3 image, patch 1... use 3x3 with patch 2 stride 1: center covered 4 times
        let det = RegionBrightnessDetector { top: 1, left: 1, height: 1, width: 1 };
        let img = Array2::<f64>::from_elem((3, 3), 1.0);
        let m = saliency_map(&det, &img, 2, 1, 0.0).unwrap();
        // every patch covers the center, each drop is 1.0
        assert_eq!(m.heat[[1, 1]], 1.0);
        // the corner (0,0) is covered only by patch (0,0) which also hits center
        assert_eq!(m.heat[[0, 0]], 1.0);
    }

    #[test]
    fn uncovered_cells_stay_zero() {
        let det = RegionBrightnessDetector { top: 0, left: 0, height: 5, width: 5 };
        let img = Array2::<f64>::from_elem((5, 5), 1.0);
        let m = saliency_map(&det, &img, 2, 2, 0.0).unwrap();
        for i in 0..5 {
            assert_eq!(m.heat[[4, i]], 0.0);
            assert_eq!(m.heat[[i, 4]], 0.0);
        }
        assert!(m.heat[[0, 0]] > 0.0);
    }

    #[test]
    fn errors() {
        let img = Array2::<f64>::zeros((4, 6));
        let det = ConstantDetector(0.5);
        assert!(matches!(
            saliency_map(&det, &img, 5, 1, 0.0),
            Err(ExplainError::PatchTooLarge { patch: 5, rows: 4, cols: 6 })
        ));
        assert!(saliency_map(&det, &img, 2, 0, 0.0).is_err());
        assert!(saliency_map(&det, &img, 0, 1, 0.0).is_err());
        assert!(matrix_from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn serde_round_trip_as_rows() {
        let det = RegionBrightnessDetector { top: 2, left: 4, height: 2, width: 2 };
        let m = saliency_map(&det, &bright_image(), 2, 2, 0.0).unwrap();
        let json = serde_json::to_value(&m).unwrap();
        assert_eq!(json["heat"].as_array().unwrap().len(), 8);
        let back: SaliencyMap = serde_json::from_value(json).unwrap();
        assert_eq!(back, m);
    }
}
