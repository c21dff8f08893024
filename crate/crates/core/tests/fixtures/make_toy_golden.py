"""Recomputes the toy test-partition metrics from the stored checkpoint.

Reads the WLC1 checkpoint and graph JSON files directly and runs the forward
pass, aggregation and metrics with numpy. Writes toy/golden_link.csv and
toy/golden_node.csv in the same layout as the eval command.

    python3 make_toy_golden.py   # run from this directory
"""

import csv
import json
import math
import struct

import numpy as np

ALPHA = "ACDEFGHIKLMNPQRSTVWY"


def read_checkpoint(path):
    raw = open(path, "rb").read()
    assert raw[:4] == b"WLC1"
    (hlen,) = struct.unpack_from("<I", raw, 4)
    header = json.loads(raw[8:8 + hlen])
    pos = 8 + hlen
    params = {}
    while pos < len(raw):
        (nlen,) = struct.unpack_from("<H", raw, pos)
        pos += 2
        name = raw[pos:pos + nlen].decode()
        pos += nlen
        rows, cols = struct.unpack_from("<II", raw, pos)
        pos += 8
        params[name] = np.frombuffer(raw, "<f8", rows * cols, pos).reshape(rows, cols)
        pos += 8 * rows * cols
    return header, params


def onehot(seq):
    x = np.zeros((len(seq), 21))
    for i, c in enumerate(seq):
        x[i, ALPHA.index(c) if c in ALPHA else 20] = 1.0
    return x


def norm_adj(n, edges):
    a = np.eye(n)
    for i, j in edges:
        a[i, j] = a[j, i] = 1.0
    d = 1.0 / np.sqrt(a.sum(1))
    return a * d[:, None] * d[None, :]


def branch(p, prefix, x, adj, layers):
    h = x @ p[f"{prefix}.proj.weight"] + p[f"{prefix}.proj.bias"]
    for l in range(1, layers + 1):
        h = adj @ (h @ p[f"{prefix}.layer{l}.weight"]) + p[f"{prefix}.layer{l}.bias"]
        if l < layers:
            h = np.maximum(h, 0.0)
    return h


def metrics(y, pred):
    y, pred = np.asarray(y, bool), np.asarray(pred, bool)
    tp = float(np.sum(y & pred))
    fp = float(np.sum(~y & pred))
    tn = float(np.sum(~y & ~pred))
    fn = float(np.sum(y & ~pred))
    r = lambda a, b: a / b if b > 0 else 0.0
    mcc = r(tp * tn - fp * fn, math.sqrt((tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)))
    return mcc, r(tp, tp + fp), r(tp, tp + fn), r(2 * tp, 2 * tp + fp + fn)


def auc(scores, y):
    pos = [s for s, t in zip(scores, y) if t]
    neg = [s for s, t in zip(scores, y) if not t]
    if not pos or not neg:
        return None
    total = sum(1.0 if a > b else 0.5 if a == b else 0.0 for a in pos for b in neg)
    return total / (len(pos) * len(neg))


def rows_for(records):
    out = [[r[0]] + [f"{v:.6f}" if v is not None else "NA" for v in r[1:]] for r in records]
    for label, fn in (("mean", np.mean), ("stderr", None)):
        row = [label]
        for k in range(1, 6):
            vals = [r[k] for r in records if r[k] is not None]
            if fn is not None:
                row.append(f"{np.mean(vals):.6f}")
            else:
                se = np.std(vals, ddof=1) / math.sqrt(len(vals)) if len(vals) > 1 else 0.0
                row.append(f"{se:.6f}")
        out.append(row)
    return out


def main():
    header, p = read_checkpoint("toy/model/model.wlc")
    arch = header["architecture"]
    assert arch["encoder"] == "gcn" and arch["decoder"] == "inner_product"
    threshold = header["aggregation"]["node_threshold"]
    with open("toy/data/split.csv") as fh:
        test = [r["complex_id"] for r in csv.DictReader(fh) if r["partition"] == "test"]
    link, node = [], []
    for cid in test:
        g = json.load(open(f"toy/data/{cid}.graph.json"))
        ab_seq = "".join(g["ab"]["seqres"])
        ab_mask = [v for m in g["ab"]["seqres2cdr"] for v in m]
        x_ab = onehot(ab_seq)[np.array(ab_mask) == 1]
        ag_seq = "".join(g["ag"]["seqres"])
        x_ag = onehot(ag_seq)[np.array(g["ag"]["seqres2surf"]) == 1]
        m, n = len(x_ab), len(x_ag)
        z_ab = branch(p, "ab", x_ab, norm_adj(m, g["ab"]["edges"]), arch["layers"])
        z_ag = branch(p, "ag", x_ag, norm_adj(n, g["ag"]["edges"]), arch["layers"])
        probs = 1.0 / (1.0 + np.exp(-(z_ab @ z_ag.T)))
        y = np.zeros((m, n), bool)
        for i, j in g["bipartite_edges"]:
            y[i, j] = True
        link.append((cid, *metrics(y.ravel(), probs.ravel() > 0.5)[:3],
                     auc(probs.ravel().tolist(), y.ravel().tolist()),
                     metrics(y.ravel(), probs.ravel() > 0.5)[3]))
        epi = [bool(v) for v, s in zip(g["ag"]["seqres2epitope"], g["ag"]["seqres2surf"]) if s]
        scores = probs.sum(0)
        nm = metrics(epi, scores > threshold)
        node.append((cid, *nm[:3], auc(scores.tolist(), epi), nm[3]))
    for name, recs in (("toy/golden_link.csv", link), ("toy/golden_node.csv", node)):
        with open(name, "w", newline="\n") as fh:
            fh.write("id,mcc,precision,recall,auc_roc,f1\n")
            for row in rows_for(recs):
                fh.write(",".join(row) + "\n")


if __name__ == "__main__":
    main()
