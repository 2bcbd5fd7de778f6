"""Low-resource phoneme recognition: log-mel features, a conv-GRU seq2seq
model with attention, weighted-loss training and evaluation."""

__version__ = "0.1.0"
