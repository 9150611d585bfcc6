import plotly.express as px
import streamlit as st

from data.analytics import generation_table
from styling import ACCENT, VAL_COLOR, style_figure


def render_generations():
    st.title("Mini-generations")
    df_gen = st.session_state.generations_df
    if df_gen.empty:
        st.info("No generations.csv in this run.")
        return

    table = generation_table(df_gen, st.session_state.surgery_df)

    ch1, ch2 = st.columns(2)
    with ch1:
        fig = px.line(table, x="mini_generation", y=["val_err_cm", "test_err_cm"], markers=True,
                      color_discrete_sequence=[VAL_COLOR, ACCENT])
        fig.update_xaxes(dtick=1)
        st.plotly_chart(style_figure(fig, height=300, title="Error at the end of each mini-generation"),
                        use_container_width=True)
    with ch2:
        fig2 = px.bar(table, x="mini_generation", y="filters_reinit", color="admitted")
        fig2.update_xaxes(dtick=1)
        st.plotly_chart(style_figure(fig2, height=300, title="Filters re-initialized after each mini-generation"),
                        use_container_width=True)

    st.dataframe(table, use_container_width=True, hide_index=True)
    admitted = int(table["admitted"].astype(bool).sum())
    st.caption(f"{admitted} of {len(table)} snapshots were admitted to the teacher pool.")
