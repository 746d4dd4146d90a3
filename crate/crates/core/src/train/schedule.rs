use super::TrainConfig;

/// Step decay: `base_lr · gamma^floor(epoch / step_epochs)`.
pub fn lr_at(epoch: usize, config: &TrainConfig) -> f64 {
    let steps = (epoch / config.schedule.step_epochs.max(1)) as i32;
    config.base_lr * config.schedule.gamma.powi(steps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schedule() {
        let c = TrainConfig::default();
        assert_eq!(lr_at(0, &c), 1e-3);
        assert_eq!(lr_at(4, &c), 1e-3);
        assert!((lr_at(5, &c) - 5e-4).abs() < 1e-18);
        assert!((lr_at(12, &c) - 1e-3 * 0.25).abs() < 1e-18);
        assert!((0..100).all(|e| lr_at(e + 1, &c) <= lr_at(e, &c)));
    }
}
