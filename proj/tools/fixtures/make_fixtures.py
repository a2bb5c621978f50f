# Copyright 2026 The gaia-ood Authors
# SPDX-License-Identifier: Apache-2.0
"""Builds the committed test fixture: a tiny 4-block residual CNN trained on a
synthetic 4-class shape task, plus ID / OOD dataset archives and reference
logits for cross-implementation checks.

Usage: python3 tools/fixtures/make_fixtures.py --out tests/fixtures --seed 0
"""

import argparse
import hashlib
import json
import pathlib
import struct

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

SIZE = 32
CLASSES = 4
WIDTHS = (8, 16, 32, 32)


# ---------------------------------------------------------------------------
# archive format (little-endian): "GWTA" | u32 version | u32 count | tensors

def write_archive(path, tensors):
    out = bytearray(b"GWTA")
    out += struct.pack("<II", 1, len(tensors))
    for name, arr in tensors:
        raw = name.encode("utf-8")
        if arr.dtype == np.float32:
            dtype = 0
        elif arr.dtype == np.int32:
            dtype = 1
        else:
            raise ValueError(f"unsupported dtype {arr.dtype} for {name}")
        out += struct.pack("<H", len(raw)) + raw
        out += struct.pack("<BB", dtype, arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes()
    pathlib.Path(path).write_bytes(bytes(out))


# ---------------------------------------------------------------------------
# synthetic data

def _shape_image(rng, label):
    img = np.zeros((SIZE, SIZE), np.float32)
    yy, xx = np.mgrid[0:SIZE, 0:SIZE]
    inten = rng.uniform(0.6, 1.0)
    if label == 0:  # horizontal bar
        h = rng.integers(3, 6)
        y0 = rng.integers(2, SIZE - h - 2)
        x0, x1 = rng.integers(1, 8), rng.integers(SIZE - 8, SIZE - 1)
        img[y0:y0 + h, x0:x1] = inten
    elif label == 1:  # vertical bar
        w = rng.integers(3, 6)
        x0 = rng.integers(2, SIZE - w - 2)
        y0, y1 = rng.integers(1, 8), rng.integers(SIZE - 8, SIZE - 1)
        img[y0:y1, x0:x0 + w] = inten
    elif label == 2:  # filled square
        s = rng.integers(8, 14)
        y0, x0 = rng.integers(1, SIZE - s - 1, size=2)
        img[y0:y0 + s, x0:x0 + s] = inten
    else:  # ring
        r = rng.uniform(6, 10)
        cy, cx = rng.uniform(r + 1, SIZE - r - 1, size=2)
        d = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
        img[np.abs(d - r) < 1.6] = inten
    img += rng.normal(0, 0.05, img.shape).astype(np.float32)
    return np.clip(img, 0, 1)


def make_id(rng, n):
    labels = rng.integers(0, CLASSES, size=n).astype(np.int32)
    images = np.stack([_shape_image(rng, int(c)) for c in labels])[:, None]
    return images.astype(np.float32), labels


def make_uniform_noise(rng, n):
    return rng.uniform(0, 1, size=(n, 1, SIZE, SIZE)).astype(np.float32)


def make_texture(rng, n):
    yy, xx = np.mgrid[0:SIZE, 0:SIZE]
    out = []
    for _ in range(n):
        period = rng.uniform(3, 8)
        theta = rng.uniform(0, np.pi)
        phase = rng.uniform(0, 2 * np.pi)
        u = np.cos(theta) * xx + np.sin(theta) * yy
        tex = 0.5 + 0.5 * np.sign(np.sin(2 * np.pi * u / period + phase))
        if rng.uniform() < 0.5:
            v = -np.sin(theta) * xx + np.cos(theta) * yy
            tex = tex * (0.5 + 0.5 * np.sign(np.sin(2 * np.pi * v / period)))
        tex = tex * rng.uniform(0.5, 1.0) + rng.normal(0, 0.05, tex.shape)
        out.append(np.clip(tex, 0, 1))
    return np.stack(out)[:, None].astype(np.float32)


# ---------------------------------------------------------------------------
# model

class Block(nn.Module):
    def __init__(self, cin, cout, stride):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, 1, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(cout)
        self.down = None
        if stride != 1 or cin != cout:
            self.down = nn.Sequential(nn.Conv2d(cin, cout, 1, stride, 0, bias=False),
                                      nn.BatchNorm2d(cout))

    def forward(self, x, taps=None, label=None):
        y = F.relu(self.bn1(self.conv1(x)))
        y = self.bn2(self.conv2(y))
        s = x if self.down is None else self.down(x)
        z = y + s
        if taps is not None:
            z.retain_grad()
            taps[label] = z
        return F.relu(z)


class ToyResNet(nn.Module):
    def __init__(self):
        super().__init__()
        self.conv = nn.Conv2d(1, WIDTHS[0], 3, 1, 1, bias=False)
        self.bn = nn.BatchNorm2d(WIDTHS[0])
        strides = (1, 2, 2, 2)
        cin = WIDTHS[0]
        blocks = []
        for w, s in zip(WIDTHS, strides):
            blocks.append(Block(cin, w, s))
            cin = w
        self.blocks = nn.ModuleList(blocks)
        self.fc = nn.Linear(cin, CLASSES)

    def features(self, x, taps=None):
        x = F.relu(self.bn(self.conv(x)))
        for i, b in enumerate(self.blocks):
            x = b(x, taps, f"block{i + 1}")
        return x

    def classify(self, a_last):
        return self.fc(a_last.mean(dim=(2, 3)))

    def forward(self, x, taps=None):
        return self.classify(self.features(x, taps))


def graph_document(model):
    lines = [f"input 1 {SIZE} {SIZE}", f"classes {CLASSES}", ""]

    def conv(name, src, m, prefix):
        k = m.kernel_size[0]
        return (f"{name}: conv2d in={src} out={m.out_channels} kernel={k} "
                f"stride={m.stride[0]} pad={m.padding[0]} weight={prefix}.weight")

    def bn(name, src, prefix):
        return (f"{name}: batchnorm in={src} eps=1e-5 gamma={prefix}.weight beta={prefix}.bias "
                f"mean={prefix}.running_mean var={prefix}.running_var")

    lines += [conv("stem_conv", "input", model.conv, "conv"), bn("stem_bn", "stem_conv", "bn"),
              "stem_relu: relu in=stem_bn"]
    prev = "stem_relu"
    for i, b in enumerate(model.blocks):
        p = f"blocks.{i}"
        n = f"b{i + 1}"
        lines += [conv(f"{n}_conv1", prev, b.conv1, f"{p}.conv1"), bn(f"{n}_bn1", f"{n}_conv1", f"{p}.bn1"),
                  f"{n}_relu1: relu in={n}_bn1",
                  conv(f"{n}_conv2", f"{n}_relu1", b.conv2, f"{p}.conv2"),
                  bn(f"{n}_bn2", f"{n}_conv2", f"{p}.bn2")]
        short = prev
        if b.down is not None:
            lines += [conv(f"{n}_down", prev, b.down[0], f"{p}.down.0"),
                      bn(f"{n}_down_bn", f"{n}_down", f"{p}.down.1")]
            short = f"{n}_down_bn"
        lines += [f"{n}_add: add in={n}_bn2,{short}", f"{n}_out: relu in={n}_add"]
        prev = f"{n}_out"
    lines += ["gap: global_avg_pool in=" + prev,
              f"fc: linear in=gap out={CLASSES} weight=fc.weight bias=fc.bias", ""]
    for i in range(4):
        lines.append(f"tap block{i + 1} b{i + 1}_add block{i + 1}")
    lines.append(f"split {prev}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# reference scorers (sanity check of the fixture only)

def auroc(id_s, ood_s):
    id_s, ood_s = np.asarray(id_s), np.asarray(ood_s)
    gt = (ood_s[:, None] > id_s[None, :]).sum()
    eq = (ood_s[:, None] == id_s[None, :]).sum()
    return (gt + 0.5 * eq) / (len(id_s) * len(ood_s))


def gaia_scores(model, x, method, blocks):
    model.eval()
    x = x.clone()
    taps = {}
    if method == "z":
        logits = model(x, taps)
        c = logits.argmax(1)
        logits.gather(1, c[:, None]).sum().backward()
        rows = [(taps[b].grad != 0).float().mean(dim=(2, 3)) for b in blocks]
    else:
        a_last = model.features(x, taps)
        a_det = a_last.detach().requires_grad_(True)
        F.log_softmax(model.classify(a_det), 1).sum().backward()
        e_out = a_det.grad.abs().flatten(1).mean(1)
        a_last.sum().backward()
        denom = torch.sqrt(torch.clamp(e_out, min=1e-12))[:, None]
        rows = [taps[b].grad.abs().mean(dim=(2, 3)) / denom for b in blocks]
    sq = sum((r ** 2).sum(1) for r in rows)
    return torch.sqrt(sq).detach().numpy()


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="tests/fixtures")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--train", type=int, default=2000)
    ap.add_argument("--test", type=int, default=256)
    ap.add_argument("--epochs", type=int, default=3)
    args = ap.parse_args()

    torch.manual_seed(args.seed)
    torch.use_deterministic_algorithms(True)
    torch.set_num_threads(1)
    rng = np.random.default_rng(args.seed)

    train_x, train_y = make_id(rng, args.train)
    test_x, test_y = make_id(rng, args.test)
    noise_x = make_uniform_noise(rng, args.test)
    tex_x = make_texture(rng, args.test)
    mean, std = float(train_x.mean()), float(train_x.std())
    norm = lambda a: ((a - mean) / std).astype(np.float32)

    model = ToyResNet()
    opt = torch.optim.Adam(model.parameters(), lr=3e-3)
    tx, ty = torch.from_numpy(norm(train_x)), torch.from_numpy(train_y).long()
    losses = []
    for epoch in range(args.epochs):
        model.train()
        perm = torch.randperm(len(tx))
        for i in range(0, len(tx), 64):
            idx = perm[i:i + 64]
            loss = F.cross_entropy(model(tx[idx]), ty[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
            if not np.isfinite(losses[-1]):
                raise SystemExit(f"training diverged; loss trace tail: {losses[-20:]}")
    model.eval()

    with torch.no_grad():
        acc = float((model(torch.from_numpy(norm(test_x))).argmax(1).numpy() == test_y).mean())
    print(f"ID test accuracy: {acc:.3f}")
    if acc < 0.9:
        raise SystemExit("fixture model below 90% ID accuracy")

    blocks_all = ["block1", "block2", "block3", "block4"]
    tid = torch.from_numpy(norm(test_x))
    for name, ood in (("noise", noise_x), ("texture", tex_x)):
        tood = torch.from_numpy(norm(ood))
        for m in ("z", "a"):
            for sel in (["block1"], ["block2"], ["block3"], ["block4"], ["block3", "block4"], blocks_all):
                a = auroc(gaia_scores(model, tid, m, sel), gaia_scores(model, tood, m, sel))
                print(f"{name:8s} gaia-{m} {'+'.join(s[-1] for s in sel):8s} AUROC {a:.3f}")

    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    state = {k: v.detach().numpy().astype(np.float32) for k, v in model.state_dict().items()
             if not k.endswith("num_batches_tracked")}
    write_archive(out / "toy_resnet.gwta", sorted(state.items()))
    (out / "toy_resnet.graph").write_text(graph_document(model))

    write_archive(out / "id_test.gwta", [("images", norm(test_x)), ("labels", test_y)])
    write_archive(out / "ood_noise.gwta", [("images", norm(noise_x))])
    write_archive(out / "ood_texture.gwta", [("images", norm(tex_x))])

    ref_x = norm(test_x[:8])
    with torch.no_grad():
        ref_logits = model(torch.from_numpy(ref_x)).numpy().astype(np.float32)
    write_archive(out / "reference.gwta", [("inputs", ref_x), ("logits", ref_logits)])

    manifest = {
        "model": "toy_resnet",
        "input_shape": [1, SIZE, SIZE],
        "classes": CLASSES,
        "seed": args.seed,
        "normalization": {"mean": mean, "std": std},
        "id_test_accuracy": acc,
        "taps": {f"block{i + 1}": f"b{i + 1}_add" for i in range(4)},
        "reference_inputs_sha256": hashlib.sha256(ref_x.tobytes()).hexdigest(),
        "reference_logits": "reference.gwta",
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


if __name__ == "__main__":
    main()
