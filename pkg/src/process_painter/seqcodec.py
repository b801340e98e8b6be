# process_painter/seqcodec.py

import re
from dataclasses import dataclass, field

from .errors import CodecError, TerminationRuleError, UnbalancedTagError, VisionBlockError
from .orchestrator import Segment, Trajectory, validate_segments

# --- Vocabulary ---
INS_OPEN, INS_CLOSE = "<ins>", "</ins>"
DES_OPEN, DES_CLOSE = "<des>", "</des>"
REFINE_OPEN, REFINE_CLOSE = "<refine>", "</refine>"
VISION_START, VISION_END = "<|vision_start|>", "<|vision_end|>"
EOS = "<|endoftext|>"

TEXT_TAGS = (INS_OPEN, INS_CLOSE, DES_OPEN, DES_CLOSE, REFINE_OPEN, REFINE_CLOSE)
VISION_TAGS = (VISION_START, VISION_END)
SPECIAL_TOKENS = (*TEXT_TAGS, *VISION_TAGS, EOS)

_IMAGE_RE = re.compile(r"^<\|image:(\d+)\|>$")


def image_token(index):
    return f"<|image:{index}|>"


def token_type(token):
    """One of tag, boundary, image, eos or word."""
    if token in TEXT_TAGS:
        return "tag"
    if token in VISION_TAGS:
        return "boundary"
    if token == EOS:
        return "eos"
    if _IMAGE_RE.match(token):
        return "image"
    return "word"


@dataclass(frozen=True)
class TokenStream:
    """Tokens of one trajectory; image tokens index into `images`."""

    prompt: str
    tokens: tuple
    images: tuple
    meta: dict = field(default_factory=dict)
    initial_image: object = None

    def __len__(self):
        return len(self.tokens)


@dataclass(frozen=True)
class LossMask:
    ce_mask: tuple
    mse_mask: tuple

    @property
    def ce_count(self):
        return sum(self.ce_mask)


# --- Encoding ---
def encode(t):
    """
    Serializes a trajectory into tagged tokens.

    Plans become <ins>..</ins><des>..</des>, refinements <refine>..</refine>, images a
    <|vision_start|> image <|vision_end|> block, and inspect text stays untagged. Text is split on
    whitespace. The stream closes with end-of-sequence right after the final image block.

    Raises:
        CodecError: The trajectory does not follow the segment grammar.
    """
    if not validate_segments(t.segments):
        raise CodecError("trajectory segments do not follow the plan/vision/inspect/refine cycle")
    tokens = []
    images = []
    for segment in t.segments:
        if segment.kind == "plan":
            tokens += [INS_OPEN, *segment.ins_text.split(), INS_CLOSE, DES_OPEN, *segment.des_text.split(), DES_CLOSE]
        elif segment.kind == "refine":
            tokens += [REFINE_OPEN, *segment.text.split(), REFINE_CLOSE]
        elif segment.kind == "inspect":
            tokens += segment.text.split()
        else:
            tokens += [VISION_START, image_token(len(images)), VISION_END]
            images.append(segment.image)
    tokens.append(EOS)
    return TokenStream(t.prompt, tuple(tokens), tuple(images), dict(t.meta), t.initial_image)


# --- Decoding ---
def _read_text(body, i, close):
    words = []
    while i < len(body):
        token = body[i]
        if token == close:
            return " ".join(words), i + 1
        if token_type(token) != "word":
            raise UnbalancedTagError(f"expected {close} before {token} at token {i}")
        words.append(token)
        i += 1
    raise UnbalancedTagError(f"missing {close}")


def _read_vision(body, i, images):
    if i == len(body) - 1:
        raise TerminationRuleError(f"{VISION_START} follows the final image block")
    payload = []
    j = i + 1
    while j < len(body) and body[j] != VISION_END:
        token = body[j]
        if token_type(token) != "image":
            raise VisionBlockError(f"unexpected {token!r} inside a vision block at token {j}")
        payload.append(int(_IMAGE_RE.match(token).group(1)))
        j += 1
    if j == len(body):
        raise UnbalancedTagError(f"missing {VISION_END}")
    if len(payload) != 1:
        raise VisionBlockError(f"vision block at token {i} holds {len(payload)} images")
    if payload[0] >= len(images):
        raise VisionBlockError(f"image {payload[0]} is not in the stream")
    return images[payload[0]], j + 1


def decode(s):
    """
    Inverse of encode.

    Raises:
        UnbalancedTagError: A tag is missing its partner.
        VisionBlockError: A vision block does not hold exactly one image.
        TerminationRuleError: The stream does not end with an image block and end-of-sequence.
    """
    tokens = list(s.tokens)
    if not tokens or tokens[-1] != EOS or EOS in tokens[:-1]:
        raise TerminationRuleError("stream must end with exactly one end-of-sequence token")
    body = tokens[:-1]
    segments = []
    i = 0
    while i < len(body):
        token = body[i]
        kind = token_type(token)
        if token == INS_OPEN:
            ins, i = _read_text(body, i + 1, INS_CLOSE)
            if i >= len(body) or body[i] != DES_OPEN:
                raise UnbalancedTagError(f"{INS_CLOSE} must be followed by {DES_OPEN}")
            des, i = _read_text(body, i + 1, DES_CLOSE)
            segments.append(Segment("plan", ins_text=ins, des_text=des))
        elif token == REFINE_OPEN:
            text, i = _read_text(body, i + 1, REFINE_CLOSE)
            segments.append(Segment("refine", text=text))
        elif token == VISION_START:
            image, i = _read_vision(body, i, s.images)
            segments.append(Segment.vision(image))
        elif kind == "image":
            raise VisionBlockError(f"image token outside a vision block at token {i}")
        elif kind != "word":
            raise UnbalancedTagError(f"unexpected {token} at token {i}")
        else:
            words = []
            while i < len(body) and token_type(body[i]) == "word":
                words.append(body[i])
                i += 1
            segments.append(Segment("inspect", text=" ".join(words)))

    if not segments or segments[-1].kind != "vision":
        raise TerminationRuleError("stream must end with an image block")
    return Trajectory(s.prompt, tuple(segments), segments[-1].image, s.initial_image, dict(s.meta))


# --- Loss masks ---
def loss_mask(s):
    """
    Which positions carry the text loss and which image blocks carry the flow loss.

    Text loss covers every word of a text segment, the text tags, and both vision boundary tokens
    (so the model learns when to start and stop drawing); never image tokens or end-of-sequence.
    Every image block in the stream is generated, so every one carries the flow loss.
    """
    ce = []
    blocks = 0
    in_vision = False
    for token in s.tokens:
        if token == VISION_START:
            in_vision = True
            ce.append(True)
        elif token == VISION_END:
            in_vision = False
            blocks += 1
            ce.append(True)
        elif token == EOS or in_vision:
            ce.append(False)
        else:
            ce.append(True)
    return LossMask(tuple(ce), (True,) * blocks)


def verify_loss_mask(s, mask):
    """Recomputes the mask by classifying each token on its own; True when both agree."""
    expected_ce = tuple(token_type(t) in ("word", "tag", "boundary") for t in s.tokens)
    images = sum(1 for t in s.tokens if token_type(t) == "image")
    return mask.ce_mask == expected_ce and mask.mse_mask == (True,) * images
