"""Instance association: contrastive embeddings from augmented views and online bi-softmax tracking."""

__version__ = "0.1.0"
