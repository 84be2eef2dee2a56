from .metrics import accuracy_mcq, bleu, cider, rouge_l
from .runner import EvalReport, answer_mcq, evaluate_bundle, run_eval

__all__ = ["EvalReport", "accuracy_mcq", "answer_mcq", "bleu", "cider", "evaluate_bundle", "rouge_l", "run_eval"]
