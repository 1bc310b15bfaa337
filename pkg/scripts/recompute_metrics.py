#!/usr/bin/env python3
"""Recompute evaluation metrics from a stored predictions file.

Independent of the harness implementation: builds its own confusion
counts with plain loops. Used to cross-check `upa eval` output.

Usage: recompute_metrics.py predictions.json n_classes
"""

import json
import sys


def recompute(preds, truths, n_classes):
    flat_pred, flat_truth = [], []
    per_cloud = []
    pairs = preds if isinstance(preds[0], list) else [preds]
    truth_pairs = truths if isinstance(truths[0], list) else [truths]
    for p_cloud, t_cloud in zip(pairs, truth_pairs):
        flat_pred.extend(p_cloud)
        flat_truth.extend(t_cloud)
        per_cloud.append((p_cloud, t_cloud))

    correct = sum(1 for p, t in zip(flat_pred, flat_truth) if p == t)
    oa = correct / len(flat_pred)

    def iou_table(p_list, t_list):
        tp = [0] * n_classes
        fp = [0] * n_classes
        fn = [0] * n_classes
        for p, t in zip(p_list, t_list):
            if p == t:
                tp[p] += 1
            else:
                fp[p] += 1
                fn[t] += 1
        table = {}
        for c in range(n_classes):
            union = tp[c] + fp[c] + fn[c]
            if union:
                table[c] = tp[c] / union
        return table

    global_iou = iou_table(flat_pred, flat_truth)
    class_miou = sum(global_iou.values()) / len(global_iou)
    cloud_means = []
    for p_cloud, t_cloud in per_cloud:
        table = iou_table(p_cloud, t_cloud)
        cloud_means.append(sum(table.values()) / len(table))
    instance_miou = sum(cloud_means) / len(cloud_means)
    return {"oa": oa, "class_miou": class_miou, "instance_miou": instance_miou,
            "per_class_iou": [global_iou.get(c) for c in range(n_classes)]}


def main(argv):
    with open(argv[1]) as fh:
        stored = json.load(fh)
    result = recompute(stored["pred"], stored["truth"], int(argv[2]))
    json.dump(result, sys.stdout, indent=2)
    print()
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv))
