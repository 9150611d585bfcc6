import numpy as np
import pandas as pd


def basic_counters(df):
    """Headline numbers of one run's per-epoch history"""
    if df.empty:
        return {
            'epochs': 0,
            'final_val': np.nan,
            'final_train': np.nan,
            'best_val': np.nan,
            'best_epoch': 0,
            'gap': np.nan,
        }

    ordered = df.sort_values("epoch")
    last = ordered.iloc[-1]
    best = ordered.loc[ordered["val_err_cm"].idxmin()]

    return {
        'epochs': len(ordered),
        'final_val': float(last["val_err_cm"]),
        'final_train': float(last["train_err_cm"]),
        'best_val': float(best["val_err_cm"]),
        'best_epoch': int(best["epoch"]),
        'gap': float(last["val_err_cm"] - last["train_err_cm"]),
    }


def reborn_points(df):
    """One row per re-initialization: val error before it, right after it, and at the
    end of the following mini-generation."""
    if df.empty or not df["reborn"].astype(bool).any():
        return pd.DataFrame(columns=["epoch", "mini_generation", "val_before", "val_after", "val_recovered", "recovered"])

    ordered = df.sort_values("epoch").reset_index(drop=True)
    rows = []
    for pos in ordered.index[ordered["reborn"].astype(bool)]:
        if pos == 0:
            continue
        mg = ordered.at[pos, "mini_generation"]
        before = float(ordered.at[pos - 1, "val_err_cm"])
        end = ordered[ordered["mini_generation"] == mg]["val_err_cm"].iloc[-1]
        rows.append({
            "epoch": int(ordered.at[pos, "epoch"]),
            "mini_generation": int(mg),
            "val_before": before,
            "val_after": float(ordered.at[pos, "val_err_cm"]),
            "val_recovered": float(end),
            "recovered": bool(end <= before),
        })
    return pd.DataFrame(rows)


def generation_table(generations, surgeries):
    """Per mini-generation errors joined with how many filters were re-initialized after it."""
    if generations.empty:
        return generations
    table = generations.copy()
    if surgeries.empty:
        table["filters_reinit"] = 0
        return table
    pruned = surgeries.groupby("mini_generation")["n_pruned"].sum().rename("filters_reinit")
    table = table.merge(pruned, how="left", left_on="mini_generation", right_index=True)
    table["filters_reinit"] = table["filters_reinit"].fillna(0).astype(int)
    return table


def msd_summary(msd_df):
    if msd_df.empty:
        return {'sequences': 0, 'msd': np.nan, 'worst_sigma': np.nan}
    return {
        'sequences': len(msd_df),
        'msd': float(msd_df["sigma"].mean()),
        'worst_sigma': float(msd_df["sigma"].max()),
    }


def layer_prune_share(prune_df):
    """Selected fraction per (mini_generation, layer)."""
    if prune_df.empty:
        return pd.DataFrame(columns=["mini_generation", "layer", "filters", "selected", "share"])
    grouped = prune_df.groupby(["mini_generation", "layer"], sort=False).agg(
        filters=("filter", "size"), selected=("selected", "sum")
    ).reset_index()
    grouped["share"] = grouped["selected"] / grouped["filters"]
    return grouped
