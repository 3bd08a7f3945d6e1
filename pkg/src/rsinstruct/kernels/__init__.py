from .fusion import (
    FeatureStack,
    concat_multimodal,
    fuse_layers,
    fuse_scales,
    fuse_stack,
    project_visual,
    synthetic_feature_stack,
)
from .gradcheck import GradcheckReport, gradcheck
from .model import (
    Batch,
    KernelConfig,
    Stage,
    TinyMLLM,
    ToyVocab,
    attention_block,
    init_store,
    stage_trainable_set,
)
from .ops import (
    ShapeError,
    bias_tuned_linear,
    next_token_cross_entropy,
    rmsnorm,
    softmax,
)
from .optim import AdamWHyper, AdamWState, adamw_step, cosine_lr
from .store import Parameter, ParameterStore
