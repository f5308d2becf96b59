# components/__init__.py
# Rough volatility pricer: path simulation, deep BSDE solver and reference pricers.
