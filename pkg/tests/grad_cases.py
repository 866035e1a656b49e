"""Tiny float64 graphs for every differentiable operation, shared by the gradient tests and the acceptance gate."""
from __future__ import annotations

import numpy as np

from skimba import tensor as T
from skimba.blocks import MSCB, BlockConfig, ConvResBlock, DDRBlock, DownsampleBlock, SemanticBlock, UpsampleBlock
from skimba.diffusion import MSCBFuse, EpsilonModel
from skimba.losses import combined_seg_loss, cross_entropy, kl_divergence, lovasz_softmax
from skimba.networks import (CameraModel, FeatureExtractor, NetworkSpec, SkimbaDenoiser, SkimbaSegmenter,
                             project_2d_to_3d)
from skimba.ssm import STMLayer, ScanParams, SkimbaBlock, dilated_scan, selective_scan, stm_layer
from skimba.tensor import Tensor
from skimba.vae import ConditionNetwork, VoxelVAE


def _t(rng, *shape, scale=1.0):
    return Tensor(scale * rng.standard_normal(shape), requires_grad=True)


def _weights(v: Tensor, rng) -> Tensor:
    """Fixed random projection so the checked scalar depends on every output entry differently."""
    return Tensor(rng.standard_normal(v.shape))


def _module_case(module, x, rng, n_params=3):
    probe = None

    def fn():
        nonlocal probe
        out = module(x)
        probe = _weights(out, np.random.default_rng(7)) if probe is None else probe
        return (out * probe).sum()

    params = module.parameters()
    picks = [params[i] for i in np.linspace(0, len(params) - 1, min(n_params, len(params))).astype(int)]
    return fn, [x, *picks]


def _op_case(op, inputs):
    probe = [None]

    def fn():
        out = op(*inputs)
        if probe[0] is None:
            probe[0] = Tensor(np.random.default_rng(7).standard_normal(out.shape))
        return (out * probe[0]).sum()

    return fn, [i for i in inputs if isinstance(i, Tensor) and i.requires_grad]


def case_elementwise(rng):
    a, b = _t(rng, 3, 4), Tensor(rng.uniform(0.5, 2.0, (4,)), requires_grad=True)
    return _op_case(lambda a, b: T.log(T.exp(a) * b + 1.0) / b - T.sqrt(b) + T.tanh(a) * T.sigmoid(a), [a, b])


def case_activations(rng):
    a = _t(rng, 2, 5)
    return _op_case(lambda a: T.leaky_relu(a, 0.01) + T.silu(a) + T.softplus(a) + T.softmax(a, 1)
                    + T.log_softmax(a, 0), [a])


def case_matmul(rng):
    return _op_case(T.matmul, [_t(rng, 3, 4), _t(rng, 4, 2)])


def case_conv3d(rng):
    x, w, b = _t(rng, 2, 2, 5, 4, 3), _t(rng, 3, 2, 3, 3, 3, scale=0.3), _t(rng, 3)
    return _op_case(lambda x, w, b: T.conv3d(x, w, b, stride=(2, 1, 1), padding=1, dilation=(1, 2, 1)), [x, w, b])


def case_conv_transpose3d(rng):
    x, w, b = _t(rng, 1, 2, 2, 3, 2), _t(rng, 2, 3, 2, 2, 2, scale=0.3), _t(rng, 3)
    return _op_case(lambda x, w, b: T.conv_transpose3d(x, w, b, stride=2), [x, w, b])


def case_layer_norm(rng):
    x, g, b = _t(rng, 3, 6), _t(rng, 6), _t(rng, 6)
    return _op_case(lambda x, g, b: T.layer_norm(x, 1, g, b), [x, g, b])


def case_instance_norm(rng):
    return _op_case(T.instance_norm, [_t(rng, 2, 3, 3, 2, 2)])


def case_selective_scan(rng):
    S, C, N = 6, 3, 2
    u = _t(rng, 2, S, C)
    delta = Tensor(rng.uniform(0.1, 0.8, (2, S, C)), requires_grad=True)
    A = Tensor(-rng.uniform(0.5, 2.0, (C, N)), requires_grad=True)
    B, Cm, D = _t(rng, 2, S, N), _t(rng, 2, S, N), _t(rng, C)
    return _op_case(selective_scan, [u, delta, A, B, Cm, D])


def case_dilated_scan(rng):
    params = ScanParams(3, 2, rng)
    x = _t(rng, 1, 7, 3)
    fn = lambda: sum(((dilated_scan(params, x, d) * float(d + 1)).sum() for d in (0, 1, 3)), Tensor(0.0))
    return fn, [x, params.A_log, params.delta_proj.weight, params.B_proj.weight, params.D_skip]


def case_stm(rng):
    layer = STMLayer(3, 2, 1, rng)
    return _module_case(lambda z: stm_layer(layer, z), _t(rng, 1, 3, 2, 2, 2), rng) if False else \
        _case_with_params(lambda z: stm_layer(layer, z), _t(rng, 1, 3, 2, 2, 2), layer.parameters())


def _case_with_params(call, x, params):
    probe = [None]

    def fn():
        out = call(x)
        if probe[0] is None:
            probe[0] = Tensor(np.random.default_rng(7).standard_normal(out.shape))
        return (out * probe[0]).sum()

    picks = [params[i] for i in np.linspace(0, len(params) - 1, min(3, len(params))).astype(int)]
    return fn, [x, *picks]


def case_skimba_block(rng):
    return _module_case(SkimbaBlock(4, rng, state_size=2), _t(rng, 1, 4, 2, 2, 2), rng)


def case_ddr(rng):
    return _module_case(DDRBlock(BlockConfig(2, 3, 3, [2]), rng), _t(rng, 1, 2, 4, 3, 3), rng)


def case_semantic_block(rng):
    return _module_case(SemanticBlock(2, rng), _t(rng, 1, 2, 4, 4, 3), rng)


def case_mscb(rng):
    return _module_case(MSCB(2, 2, rng, 7), _t(rng, 1, 2, 3, 3, 3), rng)


def case_downsample(rng):
    return _module_case(DownsampleBlock(2, 3, rng), _t(rng, 1, 2, 4, 4, 2), rng)


def case_conv_resblock(rng):
    return _module_case(ConvResBlock(2, 2, rng), _t(rng, 1, 2, 2, 2, 2), rng)


def case_upsample(rng):
    return _module_case(UpsampleBlock(3, 2, rng), _t(rng, 1, 3, 2, 2, 1), rng)


def case_cross_entropy(rng):
    logits, labels = _t(rng, 2, 4, 3, 2), rng.integers(0, 4, (2, 3, 2))
    return (lambda: cross_entropy(logits, labels)), [logits]


def case_lovasz(rng):
    logits, labels = _t(rng, 2, 3, 4, 2), rng.integers(0, 3, (2, 4, 2))
    return (lambda: lovasz_softmax(T.softmax(logits, 1), labels)), [logits]


def case_combined_loss(rng):
    logits, labels = _t(rng, 1, 3, 3, 3), rng.integers(0, 3, (1, 3, 3))
    return (lambda: combined_seg_loss(logits, labels, beta=0.7)), [logits]


def case_kl(rng):
    m, lv = _t(rng, 2, 3, 2), _t(rng, 2, 3, 2, scale=0.5)
    return (lambda: kl_divergence(m, lv)), [m, lv]


def case_vae(rng):
    vae = VoxelVAE(3, rng, channels=(2, 3), latent_channels=2)
    labels = rng.integers(0, 3, (1, 4, 4, 4))
    eta_rng = lambda: np.random.default_rng(3)

    def fn():
        rep = vae.encode(labels, eta_rng())
        return combined_seg_loss(vae.decode(rep.z), labels) + kl_divergence(rep.mean, rep.log_var)

    params = vae.parameters()
    return fn, [params[0], params[len(params) // 2], params[-1]]


def case_condition_network(rng):
    return _module_case(ConditionNetwork(2, 2, rng, channels=(2, 3)), _t(rng, 1, 2, 4, 4, 4), rng)


def case_denoiser(rng):
    fuse = MSCBFuse(2, 2, 4, rng, time_dim=4)
    model = EpsilonModel(fuse, SkimbaDenoiser(4, 2, (4, 4), rng, state_size=2))
    x, cond = _t(rng, 1, 2, 4, 4, 2), _t(rng, 1, 2, 4, 4, 2)
    probe = Tensor(rng.standard_normal((1, 2, 4, 4, 2)))
    fn = lambda: (model(x, np.array([7]), cond) * probe).sum()
    params = model.parameters()
    return fn, [x, cond, params[1], params[len(params) // 2], params[-1]]


def case_segmenter(rng):
    return _module_case(SkimbaSegmenter(3, (2, 4), rng, state_size=2), _t(rng, 1, 3, 4, 4, 2), rng)


def _tiny_camera():
    return CameraModel.look_at(eye=(-0.5, 0.4, 0.6), target=(0.4, 0.4, 0.0), fx=3.0, fy=3.0, cx=2.5, cy=1.5,
                               rows=4, cols=6)


def case_projection(rng):
    cam = _tiny_camera()
    feats = _t(rng, 1, 2, 4, 6)
    return _op_case(lambda f: project_2d_to_3d(f, cam, (4, 4, 4), 0.2), [feats])


def case_feature_extractor(rng):
    spec = NetworkSpec(grid_shape=(4, 4, 4), image_shape=(4, 6), feature_channels=2, fe_depth=1)
    fe = FeatureExtractor(spec, rng)
    cam = _tiny_camera()
    return _case_with_params(lambda img: fe(img, cam), _t(rng, 1, 3, 4, 6), fe.parameters())


CASES = {name[5:]: fn for name, fn in sorted(globals().items()) if name.startswith("case_")}


def run_case(name: str, seed: int = 0, max_entries: int = 12) -> float:
    from skimba.gradcheck import check_gradients
    with T.default_dtype(np.float64):
        fn, inputs = CASES[name](np.random.default_rng(seed))
        return check_gradients(fn, inputs, max_entries=max_entries, seed=seed)
