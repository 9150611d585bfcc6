import plotly.express as px
import plotly.graph_objects as go
import streamlit as st

from data.analytics import layer_prune_share
from styling import ACCENT, MUTED, REBORN_COLOR, style_figure


def _norm_ranges(surgery):
    """Raw, BN-adjusted and new filter-norm ranges per layer as floating bars."""
    fig = go.Figure()
    for label, lo, hi, color in (
        ("raw", "raw_min", "raw_max", MUTED),
        ("bn adjusted", "adj_min", "adj_max", ACCENT),
        ("new", "new_min", "new_max", REBORN_COLOR),
    ):
        fig.add_trace(go.Bar(x=surgery["layer"], y=surgery[hi] - surgery[lo], base=surgery[lo],
                             name=label, marker_color=color))
    fig.update_layout(barmode="group")
    fig.update_yaxes(title="filter L2 norm")
    return style_figure(fig, height=340, title="Filter norm ranges")


def render_pruning():
    st.title("Pruning & Re-initialization")
    df_scores = st.session_state.prune_df
    df_surgery = st.session_state.surgery_df
    if df_scores.empty and df_surgery.empty:
        st.info("No surgery in this run (plain training, prune_ratio 0 or a single mini-generation).")
        return

    generations = sorted(df_scores["mini_generation"].dropna().unique().astype(int)) or [1]
    mg = generations[-1]
    if len(generations) > 1:
        mg = st.select_slider("After mini-generation", options=generations, value=mg)

    scores = df_scores[df_scores["mini_generation"] == mg]
    if not scores.empty:
        layers = list(dict.fromkeys(scores["layer"]))
        picked = st.multiselect("Layers", layers, default=layers)
        shown = scores[scores["layer"].isin(picked)]
        fig = px.histogram(shown, x="score", color="selected", nbins=30, barmode="overlay",
                           color_discrete_map={True: REBORN_COLOR, False: ACCENT})
        fig.update_xaxes(title="redundancy score")
        st.plotly_chart(style_figure(fig, height=320, title="Filter scores"), use_container_width=True)

        share = layer_prune_share(scores)
        fig_s = px.bar(share, x="layer", y="share", color_discrete_sequence=[ACCENT])
        fig_s.update_yaxes(tickformat=".0%")
        st.plotly_chart(style_figure(fig_s, height=260, title="Share of filters selected per layer"),
                        use_container_width=True)

    surgery = df_surgery[df_surgery["mini_generation"] == mg]
    if not surgery.empty:
        st.plotly_chart(_norm_ranges(surgery), use_container_width=True)
        st.dataframe(surgery, use_container_width=True, hide_index=True)
