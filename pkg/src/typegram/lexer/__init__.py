"""Lexer subpackage: tokenization, context windows and n-gram keys."""
