"""Privacy-loss primitives, the k-NN KL estimator and the average-case privacy bound."""
