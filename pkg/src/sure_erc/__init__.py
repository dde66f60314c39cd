"""Uncertainty-aware mixture-of-experts, iterative reasoning and transformer-gate fusion for conversational emotion recognition."""
