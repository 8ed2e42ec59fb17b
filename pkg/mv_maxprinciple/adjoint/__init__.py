"""Backward solvers for the first-order, second-order and product-space adjoint equations."""
