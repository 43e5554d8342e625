# Numerical core: autodiff and gradient checks
