import streamlit as st

ACCENT = "#00ffc8"
VAL_COLOR = "#00d4ff"
TRAIN_COLOR = "#ffb347"
REBORN_COLOR = "#ff4b4b"
MUTED = "#8b9ba5"


def inject_global_css():
    st.markdown("""
    <style>
    @import url('https://fonts.googleapis.com/css2?family=Inter:wght@400;600;700&family=JetBrains+Mono&display=swap');

    html, body, [class*="css"] { font-family: 'Inter', sans-serif; }

    [data-testid="stSidebar"] {
        background-color: #0b1018;
        padding-top: 0.75rem;
    }

    /* Page buttons */
    .stButton > button {
        background: #17202e !important;
        border: 1px solid #273243 !important;
        border-radius: 6px !important;
        height: 44px !important;
        font-size: 14px !important;
        font-weight: 600 !important;
        color: #dce8f7 !important;
    }

    .stButton > button:hover {
        background: #00d4ff !important;
        border-color: #00b8e6 !important;
        color: #0b1018 !important;
    }

    button[kind="primary"] {
        background: linear-gradient(135deg, #00ffc8 0%, #00d49f 100%) !important;
        border: none !important;
        color: #0b1018 !important;
        font-weight: 700 !important;
    }

    [data-testid="stMetricValue"] {
        font-size: 20px !important;
        color: #00ffc8 !important;
    }
    [data-testid="stMetricLabel"] {
        color: #8b9ba5 !important;
        font-size: 12px !important;
    }

    /* Config editor */
    textarea { font-family: 'JetBrains Mono', monospace !important; font-size: 13px !important; }
    </style>
    """, unsafe_allow_html=True)


def style_figure(fig, height=300, title=None):
    """Shared dark layout for every chart on the explorer pages."""
    fig.update_layout(
        template="plotly_dark",
        height=height,
        margin=dict(t=40 if title else 20, b=20, l=20, r=20),
        legend=dict(orientation="h", y=-0.2),
    )
    if title:
        fig.update_layout(title=title)
    return fig
