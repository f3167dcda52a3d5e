"""Interactive known-item search with confidence-weighted Bayesian relevance feedback.

The package is organized around one interactive loop: a corpus of items embedded
in several parallel spaces (`kisrf.corpus`), a per-session probability
distribution over candidates updated from pairwise judgments (`kisrf.session`),
display strategies that pick the pairs to show (`kisrf.display`), an oracle user
that judges pairs per embedding space (`kisrf.simulator`), a per-space
transformer that predicts how much each judgment should count
(`kisrf.perception`, `kisrf.training`), and a simulation harness that generates
synthetic corpora, training trajectories, and evaluation reports
(`kisrf.synth`, `kisrf.policies`, `kisrf.trajectories`, `kisrf.evaluation`).
An HTTP service (`kisrf.service`) exposes live and demo sessions to clients.
"""

__version__ = "0.1.0"
