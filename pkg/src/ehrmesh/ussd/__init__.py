"""USSD surface: gateway, session lifecycle, and the interactive menu tree."""
