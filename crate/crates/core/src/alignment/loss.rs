use super::tape::{gemm, Mat};
use crate::error::{Error, Result};

/// Symmetric contrastive loss and its gradients.
#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: f64,
    pub d_images: Mat,
    pub d_texts: Mat,
    pub d_log_temperature: f64,
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Cross-entropy over rows and over columns of `S = e^lt · I Tᵀ`, averaged,
/// with matching pairs on the diagonal. Rows of both inputs are expected to
/// be normalized already.
pub fn contrastive_loss(images: &Mat, texts: &Mat, log_temperature: f64) -> Result<LossOutput> {
    if images.cols != texts.cols {
        return Err(Error::DimMismatch { expected: images.cols, got: texts.cols });
    }
    if images.rows != texts.rows {
        return Err(Error::DimMismatch { expected: images.rows, got: texts.rows });
    }
    let b = images.rows;
    if b == 0 {
        return Err(Error::invalid("contrastive loss needs at least one pair"));
    }
    let scale = log_temperature.exp();
    let mut s = gemm(images, false, texts, true);
    s.data.iter_mut().for_each(|x| *x *= scale);

    let mut ds = Mat::zeros(b, b);
    let mut row_loss = 0.0;
    for i in 0..b {
        let lse = log_sum_exp(s.row(i).iter().copied());
        row_loss += lse - s.data[i * b + i];
        for j in 0..b {
            ds.data[i * b + j] += (s.data[i * b + j] - lse).exp();
        }
        ds.data[i * b + i] -= 1.0;
    }
    let mut col_loss = 0.0;
    for j in 0..b {
        let col = (0..b).map(|i| s.data[i * b + j]);
        let lse = log_sum_exp(col);
        col_loss += lse - s.data[j * b + j];
        for i in 0..b {
            ds.data[i * b + j] += (s.data[i * b + j] - lse).exp();
        }
        ds.data[j * b + j] -= 1.0;
    }
    let norm = 0.5 / b as f64;
    ds.data.iter_mut().for_each(|x| *x *= norm);
    let loss = 0.5 * (row_loss + col_loss) / b as f64;

    let d_log_temperature = ds.data.iter().zip(&s.data).map(|(a, b)| a * b).sum();
    let mut d_images = gemm(&ds, false, texts, false);
    let mut d_texts = gemm(&ds, true, images, false);
    d_images.data.iter_mut().for_each(|x| *x *= scale);
    d_texts.data.iter_mut().for_each(|x| *x *= scale);
    Ok(LossOutput { loss, d_images, d_texts, d_log_temperature })
}
