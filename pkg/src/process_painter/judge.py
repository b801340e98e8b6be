# process_painter/judge.py

import requests  # type: ignore

from .edit_ops import Step, parse_ops
from .errors import DslSyntaxError, JudgeError
from .inspector import (
    STATUSES,
    Critique,
    Finding,
    Verdict,
    check_image_alignment,
    check_text_conflict,
)
from .logger import log
from .microworld import RasterImage
from .scene_graph import parse_scene

REQUEST_FIELDS = ("prompt_dsl", "ins_text", "des_text", "before_image", "after_image")


# --- Wire format ---
def judge_request(prompt_dsl, ins_text, des_text, before=None, after=None):
    """Builds the request record both judges accept. Images travel as nested lists."""
    return {
        "prompt_dsl": prompt_dsl,
        "ins_text": ins_text,
        "des_text": des_text,
        "before_image": before.to_list() if before is not None else None,
        "after_image": after.to_list() if after is not None else None,
    }


def verdict_to_wire(verdict):
    critique = verdict.critique
    return {
        "status": verdict.status,
        "analysis": critique.to_dict() if critique else None,
        "corrective_ins": critique.rendered_text if critique else "",
    }


def verdict_from_wire(response):
    """
    Rebuilds a Verdict from a judge response.

    Raises:
        JudgeError: The response does not follow the contract.
    """
    if not isinstance(response, dict) or response.get("status") not in STATUSES:
        raise JudgeError(f"malformed judge response: {response!r}")
    analysis = response.get("analysis")
    try:
        if analysis is None:
            return Verdict(response["status"])
        findings = tuple(Finding(f["kind"], f["expected"], f["observed"]) for f in analysis["findings"])
        text = response.get("corrective_ins", "")
        corrective = parse_ops(text) if text else ()
        return Verdict(response["status"], Critique(findings, corrective, text))
    except (KeyError, TypeError, ValueError, DslSyntaxError) as e:
        raise JudgeError(f"malformed judge analysis: {e}") from e


# --- Judges ---
class ExactJudge:
    """In-process judge backed by the symbolic inspector."""

    def judge(self, request):
        missing = [name for name in REQUEST_FIELDS[:3] if not isinstance(request.get(name), str)]
        if missing:
            raise JudgeError(f"judge request is missing {', '.join(missing)}")
        before, after = request.get("before_image"), request.get("after_image")
        if before is not None and after is not None:
            ops = parse_ops(request["ins_text"])
            step = Step(ops, request["ins_text"], request["des_text"])
            return check_image_alignment(RasterImage.from_list(before), RasterImage.from_list(after), step)
        full = parse_scene(request["prompt_dsl"])
        return check_text_conflict(request["ins_text"], request["des_text"], full)


class RemoteJudge:
    """
    Client for a judge served over HTTP (see judge_server).

    Each instance holds its own session, so workers should build their own rather than share one.
    Requests are idempotent and retried on connection errors, timeouts and 5xx responses.
    """

    def __init__(self, url, timeout=5.0, retries=3):
        if not url:
            raise JudgeError("remote judge needs a URL")
        self.url = url.rstrip("/")
        self.timeout = timeout
        self.retries = retries
        self.session = requests.Session()

    def health(self):
        try:
            response = self.session.get(f"{self.url}/health", timeout=self.timeout)
            return response.ok
        except requests.exceptions.RequestException:
            return False

    def judge(self, request):
        last_error = None
        for attempt in range(1, self.retries + 1):
            try:
                response = self.session.post(f"{self.url}/judge", json=request, timeout=self.timeout)
            except requests.exceptions.RequestException as e:
                last_error = e
                log.warning(f"JUDGE: Attempt {attempt}/{self.retries} to reach {self.url} failed: {e}")
                continue
            if response.status_code >= 500:
                last_error = f"HTTP {response.status_code}"
                log.warning(f"JUDGE: Attempt {attempt}/{self.retries} got {last_error}.")
                continue
            if not response.ok:
                raise JudgeError(f"judge rejected the request (HTTP {response.status_code}): {response.text}")
            try:
                payload = response.json()
            except ValueError as e:
                raise JudgeError("judge answered with invalid JSON") from e
            return verdict_from_wire(payload)
        raise JudgeError(f"judge at {self.url} unreachable after {self.retries} attempts: {last_error}")

    def close(self):
        self.session.close()


def make_judge(settings):
    """Remote judge when judge.url is configured, the exact in-process judge otherwise."""
    cfg = settings.get("judge", {})
    if cfg.get("url"):
        log.info(f"JUDGE: Using remote judge at {cfg['url']}.")
        return RemoteJudge(cfg["url"], cfg.get("timeout", 5.0), cfg.get("retries", 3))
    return ExactJudge()
