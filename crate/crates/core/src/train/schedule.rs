/// Cosine annealing from `base_lr` at epoch 0 to `min_lr` at epoch `total`.
pub fn cosine_lr(epoch: usize, base_lr: f64, total: usize, min_lr: f64) -> f64 {
    let e = epoch.min(total) as f64;
    let t = total.max(1) as f64;
    // weighted form so both endpoints come out exactly
    let w = 0.5 * (1.0 + (std::f64::consts::PI * e / t).cos());
    base_lr * w + min_lr * (1.0 - w)
}
