import streamlit as st

from data.data_layer import OVERRIDE_FILE, save_config_override, validate_config_text


def render_settings():
    st.title("Run Configuration")
    st.info(f"Edit a copy of this run's config. Saving writes {OVERRIDE_FILE} next to the run; "
            f"pass it to `gazetat train --config` to start a new run from it.")

    col_edit, col_info = st.columns([3, 2])
    text = col_edit.text_area("config.txt", st.session_state.config_text, height=520)

    config, error = validate_config_text(text)
    with col_info:
        if error:
            st.error(error)
        else:
            tat = config.tat()
            st.metric("Total epochs", tat.total_epochs)
            st.metric("Scheme weights", f"{config.lambda_hard} / {config.lambda_mix} / {config.lambda_teacher}")
            st.caption("hard / mix / teacher")
            st.json(st.session_state.manifest, expanded=False)

    if st.button("Save Override", type="primary", disabled=error is not None):
        path = save_config_override(st.session_state.run_dir, text)
        st.success(f"Saved {path}")
