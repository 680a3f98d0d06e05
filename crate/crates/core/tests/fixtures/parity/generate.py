"""Writes a random toy model and reference logits from a plain numpy
pre-layernorm transformer, for the forward-parity test.

    python3 generate.py   # run from this directory
"""
import json
import struct

import numpy as np

L, D, M, H, V, T = 2, 16, 32, 4, 32, 12
EPS = 1e-5
rng = np.random.default_rng(20240611)


def gauss(*shape, scale=0.3):
    return rng.normal(0.0, scale, size=shape)


w = {"embed.tok": gauss(V, D), "embed.pos": gauss(T, D), "unembed.w": gauss(V, D)}
w["ln_f.g"] = 1.0 + gauss(D, scale=0.1)
w["ln_f.b"] = gauss(D, scale=0.1)
for l in range(L):
    for p in ["ln1", "ln2"]:
        w[f"layer{l}.{p}.g"] = 1.0 + gauss(D, scale=0.1)
        w[f"layer{l}.{p}.b"] = gauss(D, scale=0.1)
    for p in "qkvo":
        w[f"layer{l}.attn.w_{p}"] = gauss(D, D)
        w[f"layer{l}.attn.b_{p}"] = gauss(D, scale=0.1)
    w[f"layer{l}.mlp.w_in"] = gauss(M, D)
    w[f"layer{l}.mlp.b_in"] = gauss(M, scale=0.1)
    w[f"layer{l}.mlp.w_out"] = gauss(D, M)
    w[f"layer{l}.mlp.b_out"] = gauss(D, scale=0.1)


def layernorm(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + EPS) * g + b


def gelu(x):
    return 0.5 * x * (1.0 + np.tanh(np.sqrt(2.0 / np.pi) * (x + 0.044715 * x**3)))


def forward(tokens):
    t = len(tokens)
    x = w["embed.tok"][tokens] + w["embed.pos"][:t]
    mask = np.triu(np.ones((t, t), dtype=bool), k=1)
    dh = D // H
    for l in range(L):
        p = f"layer{l}."
        h = layernorm(x, w[p + "ln1.g"], w[p + "ln1.b"])
        q = h @ w[p + "attn.w_q"].T + w[p + "attn.b_q"]
        k = h @ w[p + "attn.w_k"].T + w[p + "attn.b_k"]
        v = h @ w[p + "attn.w_v"].T + w[p + "attn.b_v"]
        z = np.zeros((t, D))
        for i in range(H):
            s = slice(i * dh, (i + 1) * dh)
            scores = q[:, s] @ k[:, s].T / np.sqrt(dh)
            scores[mask] = -np.inf
            a = np.exp(scores - scores.max(axis=1, keepdims=True))
            a /= a.sum(axis=1, keepdims=True)
            z[:, s] = a @ v[:, s]
        x = x + z @ w[p + "attn.w_o"].T + w[p + "attn.b_o"]
        h = layernorm(x, w[p + "ln2.g"], w[p + "ln2.b"])
        x = x + gelu(h @ w[p + "mlp.w_in"].T + w[p + "mlp.b_in"]) @ w[p + "mlp.w_out"].T + w[p + "mlp.b_out"]
    return layernorm(x, w["ln_f.g"], w["ln_f.b"]) @ w["unembed.w"].T


def write_safetensors(path, tensors, metadata):
    header = {"__metadata__": metadata}
    payload = b""
    for name in sorted(tensors):
        data = np.ascontiguousarray(tensors[name], dtype="<f8").tobytes()
        header[name] = {"dtype": "F64", "shape": list(tensors[name].shape), "data_offsets": [len(payload), len(payload) + len(data)]}
        payload += data
    h = json.dumps(header).encode()
    h += b" " * ((8 - (8 + len(h)) % 8) % 8)
    with open(path, "wb") as f:
        f.write(struct.pack("<Q", len(h)) + h + payload)


arch = {"n_layers": L, "d_model": D, "d_mlp": M, "n_heads": H, "vocab_size": V, "max_context": T, "ln_eps": EPS}
write_safetensors("model.safetensors", w, {"raretok.arch": json.dumps(arch)})

inputs = [rng.integers(0, V, size=rng.integers(1, T + 1)).tolist() for _ in range(100)]
with open("inputs.json", "w") as f:
    json.dump(inputs, f)
with open("logits.bin", "wb") as f:
    for tokens in inputs:
        f.write(np.ascontiguousarray(forward(np.array(tokens)), dtype="<f8").tobytes())
