from .answers import answer_accuracy, normalize_answer
from .boxes import (
    PR_THRESHOLDS,
    DetectionPrediction,
    attach_external_scores,
    average_precision,
    detection_ap,
    filter_by_score,
    grounding_metrics,
)
from .caption import (
    CaptionItem,
    bleu,
    bleu_all,
    caption_scores,
    cider_d,
    meteor_lite,
    meteor_single,
    rouge_l,
    rouge_l_single,
    tokenize_caption,
)
from .evaluate import (
    EvalMismatch,
    EvalReport,
    evaluate_answers,
    evaluate_captions,
    evaluate_detection,
    evaluate_grounding,
    load_predictions,
    load_scores,
)
