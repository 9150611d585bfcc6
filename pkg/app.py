import streamlit as st

from data.analytics import basic_counters, msd_summary
from data.data_layer import init_run_data, list_runs, reload_run
from styling import inject_global_css
from views.dashboard import render_dashboard
from views.generations import render_generations
from views.pruning import render_pruning
from views.robustness import render_robustness
from views.settings import render_settings

st.set_page_config(page_title="GazeTAT Runs", layout="wide", page_icon="👁️")
inject_global_css()

if "selected_page" not in st.session_state:
    st.session_state.selected_page = "Curves"

PAGES = {
    "📈 Curves": "Curves",
    "🧬 Generations": "Generations",
    "✂️ Pruning": "Pruning",
    "🎯 Robustness": "Robustness",
    "⚙️ Config": "Config",
}

with st.sidebar:
    st.markdown("### 👁️ GazeTAT")
    root = st.text_input("Runs folder", value=st.session_state.get("runs_root", "runs"))
    st.session_state.runs_root = root
    available = list_runs(root)
    if not available:
        st.warning(f"No runs under `{root}`")
        st.stop()
    run_dir = st.selectbox("Run", available)
    init_run_data(run_dir)
    st.caption(f"Loaded at {st.session_state.last_load}")

    counters = basic_counters(st.session_state.metrics_df)
    msd = msd_summary(st.session_state.msd_df)
    if counters["epochs"]:
        col_v, col_g = st.columns(2)
        col_v.metric("Val", f"{counters['final_val']:.2f} cm")
        col_g.metric("Gap", f"{counters['gap']:.2f} cm")
    else:
        st.caption("📊 No epochs logged")
    if msd["sequences"]:
        st.metric("MSD", f"{msd['msd']:.3f} cm")

    if st.button("🔄 Reload", use_container_width=True):
        reload_run()

    st.markdown("---")

    for label, page in PAGES.items():
        if st.button(label, use_container_width=True):
            st.session_state.selected_page = page
            st.rerun()

selected = st.session_state.selected_page

if selected == "Curves":
    render_dashboard()
elif selected == "Generations":
    render_generations()
elif selected == "Pruning":
    render_pruning()
elif selected == "Robustness":
    render_robustness()
elif selected == "Config":
    render_settings()
