"""PSP-NS modules package."""
