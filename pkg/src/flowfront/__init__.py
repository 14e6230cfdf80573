"""Flow-based density estimation as an auxiliary objective for a neural MVDR front-end."""
