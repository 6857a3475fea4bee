"""Scikit-learn style estimator facade over the training loop, so the head
composes with pipelines, ``clone`` and grid search."""

from __future__ import annotations

from typing import Optional, Sequence

from sklearn.base import BaseEstimator

from .docmodel import Document
from .evaluation import link_f1
from .model import ModelConfig
from .training import TrainConfig, evaluate_model, predict_docs, train

__all__ = ["GoseLinkExtractor", "check_documents"]


def check_documents(X) -> list[Document]:
    """Validate an input collection of documents."""
    if isinstance(X, Document):
        raise TypeError("expected a sequence of Document, got a single Document")
    docs = list(X)
    if not docs:
        raise ValueError("empty document collection")
    for i, d in enumerate(docs):
        if not isinstance(d, Document):
            raise TypeError(f"element {i} is {type(d).__name__}, expected Document")
    return docs


class GoseLinkExtractor(BaseEstimator):
    """Directed key->value link extractor over entity-annotated documents.

    ``fit`` trains on gold links carried by the documents themselves;
    ``predict`` returns one set of (key_id, value_id) pairs per document.
    """

    def __init__(
        self,
        d_h: int = 48,
        window: int = 4,
        n_global_tokens: int = 8,
        rounds: int = 3,
        vocab_size: int = 512,
        use_spatial_prefix: bool = True,
        use_gskm: bool = True,
        use_iteration: bool = True,
        lr: float = 1e-3,
        epochs: int = 200,
        seed: int = 0,
        shuffle: bool = True,
        grad_clip: Optional[float] = None,
    ):
        self.d_h = d_h
        self.window = window
        self.n_global_tokens = n_global_tokens
        self.rounds = rounds
        self.vocab_size = vocab_size
        self.use_spatial_prefix = use_spatial_prefix
        self.use_gskm = use_gskm
        self.use_iteration = use_iteration
        self.lr = lr
        self.epochs = epochs
        self.seed = seed
        self.shuffle = shuffle
        self.grad_clip = grad_clip

    def _model_config(self) -> ModelConfig:
        return ModelConfig(
            d_h=self.d_h,
            window=self.window,
            n_global_tokens=self.n_global_tokens,
            rounds=self.rounds,
            vocab_size=self.vocab_size,
            use_spatial_prefix=self.use_spatial_prefix,
            use_gskm=self.use_gskm,
            use_iteration=self.use_iteration,
        )

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            lr=self.lr,
            epochs=self.epochs,
            seed=self.seed,
            shuffle=self.shuffle,
            grad_clip=self.grad_clip,
        )

    def fit(self, X: Sequence[Document], y=None) -> "GoseLinkExtractor":
        docs = check_documents(X)
        self.model_config_ = self._model_config()
        self.params_, self.record_ = train(docs, self.model_config_, self._train_config())
        return self

    def predict(self, X: Sequence[Document]) -> list[set[tuple[int, int]]]:
        self._check_fitted()
        return predict_docs(self.params_, self.model_config_, check_documents(X))

    def score(self, X: Sequence[Document], y=None) -> float:
        """Micro-averaged link F1 against the documents' gold links."""
        docs = check_documents(X)
        preds = self.predict(docs)
        _, _, f1 = link_f1(preds, [set(d.links) for d in docs])
        return f1

    def evaluate(self, X: Sequence[Document]):
        self._check_fitted()
        return evaluate_model(self.params_, self.model_config_, check_documents(X))

    def _check_fitted(self) -> None:
        if not hasattr(self, "params_"):
            raise RuntimeError("estimator is not fitted; call fit() first")
