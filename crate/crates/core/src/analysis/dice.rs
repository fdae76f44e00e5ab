use super::AnalysisError;
use crate::scalar::Scalar;

/// Dice similarity `2|P ∩ G| / (|P| + |G|)` after thresholding `prediction`.
///
/// Two empty sets score 1.
pub fn dice_score<T: Scalar>(prediction: &[T], mask: &[u8], threshold: f64) -> Result<f64, AnalysisError> {
    if prediction.len() != mask.len() {
        return Err(AnalysisError::Length(prediction.len(), mask.len()));
    }
    let threshold = T::of(threshold);
    let (mut both, mut predicted, mut truth) = (0usize, 0usize, 0usize);
    for (&p, &g) in prediction.iter().zip(mask) {
        let p = p >= threshold;
        let g = g != 0;
        both += (p && g) as usize;
        predicted += p as usize;
        truth += g as usize;
    }
    if predicted + truth == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (predicted + truth) as f64)
}
