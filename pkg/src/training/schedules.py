"""Step-decay schedules for the learning rate and batch-norm momentum."""


def _clean(value: float) -> float:
    # 15 significant digits so that e.g. 0.001 * 0.7 ** 2 reads back as 0.00049
    return float(f"{value:.15g}")


def lr_at(epoch: int, cfg) -> float:
    """lr0 * decay ** floor(epoch / period)."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    return _clean(cfg.lr0 * cfg.lr_decay ** (epoch // cfg.lr_period))


def bn_momentum_at(epoch: int, cfg) -> float:
    """max(floor, m0 * decay ** floor(epoch / period))."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    return max(cfg.bn_momentum_floor, _clean(cfg.bn_momentum0 * cfg.bn_decay ** (epoch // cfg.bn_period)))
