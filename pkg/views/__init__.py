"""Streamlit page rendering modules."""
