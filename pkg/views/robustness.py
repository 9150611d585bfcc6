import plotly.express as px
import plotly.graph_objects as go
import streamlit as st

from data.analytics import msd_summary
from styling import ACCENT, MUTED, VAL_COLOR, style_figure


def render_robustness():
    st.title("Robustness")
    df_msd = st.session_state.msd_df
    df_frames = st.session_state.msd_pred_df

    if df_msd.empty:
        st.info("No msd_sequences.csv in this run. Training writes it when the dataset has fixation sequences.")
        return

    summary = msd_summary(df_msd)
    c1, c2, c3 = st.columns(3)
    c1.metric("MSD", f"{summary['msd']:.3f} cm")
    c2.metric("Worst sequence σ", f"{summary['worst_sigma']:.3f} cm")
    c3.metric("Sequences", summary["sequences"])

    fig = px.bar(df_msd, x="sequence_id", y="sigma", color_discrete_sequence=[ACCENT])
    fig.update_xaxes(type="category")
    st.plotly_chart(style_figure(fig, height=280, title="Per-sequence spread σ (cm)"), use_container_width=True)

    if not df_frames.empty:
        ids = sorted(df_frames["sequence_id"].unique())
        picked = st.multiselect("Sequences", ids, default=ids[: min(4, len(ids))])
        frames = df_frames[df_frames["sequence_id"].isin(picked)]
        targets = frames.drop_duplicates("sequence_id")

        fig_s = go.Figure()
        fig_s.add_trace(go.Scatter(x=frames["pred_x"], y=frames["pred_y"], mode="markers", name="predicted",
                                   marker=dict(color=frames["sequence_id"], colorscale="Turbo", size=6, opacity=0.7)))
        fig_s.add_trace(go.Scatter(x=targets["gt_x"], y=targets["gt_y"], mode="markers", name="fixation",
                                   marker=dict(color=VAL_COLOR, size=14, symbol="x", line=dict(color=MUTED, width=1))))
        fig_s.update_yaxes(autorange="reversed", scaleanchor="x", title="y (cm)")
        fig_s.update_xaxes(title="x (cm)")
        st.plotly_chart(style_figure(fig_s, height=460, title="Predictions around each fixation"),
                        use_container_width=True)

    df_pred = st.session_state.pred_df
    if not df_pred.empty:
        st.divider()
        by_subject = df_pred.groupby("subject")["error_cm"].mean().reset_index()
        fig_e = px.bar(by_subject, x="subject", y="error_cm", color_discrete_sequence=[VAL_COLOR])
        fig_e.update_xaxes(type="category")
        st.plotly_chart(style_figure(fig_e, height=260, title="Test error per subject (cm)"),
                        use_container_width=True)
