# Mediation estimator menu
