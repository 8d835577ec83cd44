import numpy as np
import pytest
from hypothesis import settings

from hopmix.doc import make_document, make_paragraph
from hopmix.index import DEFERRED, PARAGRAPH, SENTENCE, CombinedIndex

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


def random_index(rng, sizes, dim, deferred=False, doc_id="d"):
    """Index with paragraphs of the given sentence counts; paragraph vecs are sentence means."""
    vecs, kinds, paras, sents = [], [], [], []
    for i, n in enumerate(sizes):
        S = rng.normal(size=(n, dim))
        vecs.append(np.zeros(dim) if deferred else S.mean(axis=0))
        kinds.append(DEFERRED if deferred else PARAGRAPH)
        paras.append(i)
        sents.append(-1)
        for j in range(n):
            vecs.append(S[j])
            kinds.append(SENTENCE)
            paras.append(i)
            sents.append(j)
    return CombinedIndex(doc_id, np.array(vecs), kinds, paras, sents)


def small_doc(sizes=(2, 3), doc_id="doc"):
    paras = [make_paragraph(f"p{i}", i, [f"paragraph {i} sentence {j}." for j in range(n)])
             for i, n in enumerate(sizes)]
    return make_document(doc_id, paras)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
