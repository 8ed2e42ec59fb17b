"""Cost functional, duality checks, cost expansion, maximum-principle check and reports."""
