use crate::trainer::TrainConfig;

/// Learning rate for a zero-based epoch: a linear ramp reaching `lr0` at
/// the last warm-up epoch, then step decay counted from the end of warm-up.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    let warm = cfg.warmup_epochs;
    if epoch < warm {
        return cfg.lr0 * (epoch + 1) as f64 / warm as f64;
    }
    let steps = (epoch - warm) / cfg.decay_every_epochs;
    cfg.lr0 * cfg.decay_factor.powi(steps as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> TrainConfig {
        TrainConfig { lr0: 0.01, decay_factor: 0.5, decay_every_epochs: 25, warmup_epochs: 5, ..TrainConfig::default() }
    }

    #[test]
    fn warmup_and_decay() {
        let c = cfg();
        assert_eq!(lr_at(0, &c), 0.01 / 5.0);
        assert_eq!(lr_at(4, &c), 0.01);
        assert_eq!(lr_at(5, &c), 0.01);
        assert_eq!(lr_at(29, &c), 0.01);
        assert_eq!(lr_at(30, &c), 0.005);
        assert!((lr_at(55, &c) - 0.0025).abs() < 1e-18);
    }

    #[test]
    fn no_warmup() {
        let c = TrainConfig { warmup_epochs: 0, ..cfg() };
        assert_eq!(lr_at(0, &c), 0.01);
        assert_eq!(lr_at(25, &c), 0.005);
    }
}
