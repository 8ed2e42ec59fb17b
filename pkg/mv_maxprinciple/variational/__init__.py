"""First and second variational processes of a spike perturbation and their order studies."""
