import plotly.graph_objects as go
import streamlit as st

from data.analytics import basic_counters, reborn_points
from styling import REBORN_COLOR, TRAIN_COLOR, VAL_COLOR, style_figure


def _curve_figure(df_hist, reborn):
    fig = go.Figure()
    fig.add_trace(go.Scatter(x=df_hist["epoch"], y=df_hist["train_err_cm"], name="train",
                             mode="lines", line=dict(color=TRAIN_COLOR, width=2)))
    fig.add_trace(go.Scatter(x=df_hist["epoch"], y=df_hist["val_err_cm"], name="val",
                             mode="lines", line=dict(color=VAL_COLOR, width=3)))
    if not reborn.empty:
        fig.add_trace(go.Scatter(x=reborn["epoch"], y=reborn["val_after"], name="re-born",
                                 mode="markers", marker=dict(color=REBORN_COLOR, size=11, symbol="star")))
    # generation boundaries
    for epoch in df_hist.groupby("mini_generation")["epoch"].min().iloc[1:]:
        fig.add_vline(x=epoch - 0.5, line=dict(color="#444", dash="dot"))
    fig.update_xaxes(title="epoch")
    fig.update_yaxes(title="mean error (cm)")
    return style_figure(fig, height=400)


def render_dashboard():
    df_hist = st.session_state.metrics_df.copy()
    st.title("Training Curves")

    if df_hist.empty:
        st.info("This run has no metrics.csv yet. Train it with `gazetat train` first.")
        return

    counters = basic_counters(df_hist)
    manifest = st.session_state.manifest

    c1, c2, c3, c4 = st.columns(4)
    c1.metric("Final val", f"{counters['final_val']:.3f} cm")
    c2.metric("Final train", f"{counters['final_train']:.3f} cm")
    c3.metric("Best val", f"{counters['best_val']:.3f} cm", f"epoch {counters['best_epoch']}", delta_color="off")
    c4.metric("Train/val gap", f"{counters['gap']:.3f} cm")

    c5, c6, c7, c8 = st.columns(4)
    c5.metric("Scheme", manifest.get("scheme", "?"))
    c6.metric("Epochs", counters["epochs"])
    c7.metric("Test", f"{manifest['final_test_err_cm']:.3f} cm" if "final_test_err_cm" in manifest else "n/a")
    c8.metric("Teachers", manifest.get("teachers", 0))

    st.divider()

    reborn = reborn_points(df_hist)
    st.plotly_chart(_curve_figure(df_hist, reborn), use_container_width=True)

    ch1, ch2 = st.columns(2)
    with ch1:
        fig_loss = go.Figure(go.Scatter(x=df_hist["epoch"], y=df_hist["train_loss"],
                                        line=dict(color=TRAIN_COLOR, width=2)))
        st.plotly_chart(style_figure(fig_loss, height=260, title="Training loss"), use_container_width=True)
    with ch2:
        fig_lr = go.Figure(go.Scatter(x=df_hist["epoch"], y=df_hist["lr"], mode="lines+markers",
                                      line=dict(color=VAL_COLOR, shape="hv")))
        fig_lr.update_yaxes(type="log")
        st.plotly_chart(style_figure(fig_lr, height=260, title="Learning rate"), use_container_width=True)

    if not reborn.empty:
        st.markdown("### Re-born epochs")
        st.dataframe(reborn, use_container_width=True, hide_index=True)
