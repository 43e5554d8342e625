"""
Decoding utterances with a trained model: encoder cascade, beam search, and
the n-best / lattice files written per utterance.
"""
import os
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Sequence

from config.settings import Settings
from src.core.model import ModelParams
from src.data.corpora import SupervisedExample
from src.data.wordpiece import UNK_ID, WordpieceModel
from src.decode.beam_search import DecodeResult, Hypothesis, beam_search
from src.decode.lattice import write_lattice
from src.encoders.conformer import EncoderOutput, encode_causal, encode_noncausal
from src.frontends.audio import stack_and_subsample
from src.utils.errors import UsageError

logger = logging.getLogger('Cascade.Decode')


def encoder_output(params: ModelParams, example: SupervisedExample, which: str = 'nc') -> EncoderOutput:
    """E_C output ('c') or the cascade E_C -> E_NC output ('nc') for one utterance."""
    s = params.settings
    x = stack_and_subsample(example.audio, s.stack_size, s.stride).frames
    h_c = encode_causal(x, params, params.encoder_config)
    if which == 'c':
        return h_c
    if which == 'nc':
        return encode_noncausal(h_c, params, params.encoder_config)
    raise UsageError(f"unknown decoding path {which!r} (expected 'c' or 'nc')")


def decode_example(params: ModelParams, example: SupervisedExample, which: str = 'nc',
                   beam_width: Optional[int] = None) -> DecodeResult:
    s = params.settings
    return beam_search(encoder_output(params, example, which), params.decoder(which),
                       beam_width or s.beam_width, s.max_symbols,
                       s.lattice_signature, s.lattice_ngram)


def decode_examples(params: ModelParams, examples: Sequence[SupervisedExample], which: str = 'nc',
                    beam_width: Optional[int] = None, threads: int = 1) -> List[DecodeResult]:
    """
    Decode utterances independently; results come back in input order.

    Args:
        params: Model parameters
        examples: Utterances with audio
        which: 'nc' for the cascade, 'c' for causal-only
        beam_width: Overrides settings.beam_width
        threads: Worker threads

    Returns:
        One DecodeResult per example
    """
    run = lambda ex: decode_example(params, ex, which, beam_width)  # noqa: E731
    if threads <= 1 or len(examples) <= 1:
        return [run(ex) for ex in examples]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(run, examples))


def hypothesis_text(wordpieces: WordpieceModel, labels: Sequence[int]) -> str:
    """Decoded text; ids past the wordpiece vocabulary render as the unknown unit."""
    size = len(wordpieces)
    return wordpieces.decode([i if i < size else UNK_ID for i in labels])


def write_nbest(path: str, nbest: Sequence[Hypothesis], wordpieces: WordpieceModel) -> None:
    """One line per hypothesis: rank<TAB>score<TAB>text, rank from 1."""
    with open(path, 'w', encoding='utf-8') as f:
        for rank, hyp in enumerate(nbest, start=1):
            f.write(f"{rank}\t{hyp.score!r}\t{hypothesis_text(wordpieces, hyp.labels)}\n")


def write_decode_outputs(out_dir: str, examples: Sequence[SupervisedExample],
                         results: Sequence[DecodeResult], wordpieces: WordpieceModel) -> None:
    """Write nbest/<id>.tsv and lattices/<id>.lat for every decoded utterance."""
    nbest_dir = os.path.join(out_dir, 'nbest')
    lattice_dir = os.path.join(out_dir, 'lattices')
    os.makedirs(nbest_dir, exist_ok=True)
    os.makedirs(lattice_dir, exist_ok=True)
    for ex, result in zip(examples, results):
        write_nbest(os.path.join(nbest_dir, f"{ex.id}.tsv"), result.nbest, wordpieces)
        write_lattice(result.lattice, os.path.join(lattice_dir, f"{ex.id}.lat"))
    logger.info(f"Wrote n-best lists and lattices for {len(results)} utterances to {out_dir}")
